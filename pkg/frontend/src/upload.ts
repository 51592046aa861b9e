// Gallery of jobs plus drag-and-drop submission.

import { ApiError, listJobs, submitJob } from "./api.js";
import type { JobSummary } from "./types.js";

export class UploadView {
  private root: HTMLElement;
  private onOpen: (id: string) => void;
  private pollTimer: number | null = null;

  constructor(root: HTMLElement, onOpen: (id: string) => void) {
    this.root = root;
    this.onOpen = onOpen;
    root.innerHTML = `
      <div id="dropzone" class="dropzone">
        <p>drop a slide image here, or</p>
        <input type="file" id="file-input" accept="image/*" />
        <p id="upload-error" class="error"></p>
      </div>
      <div id="job-gallery" class="gallery"></div>`;

    const zone = root.querySelector("#dropzone") as HTMLElement;
    const input = root.querySelector("#file-input") as HTMLInputElement;
    zone.addEventListener("dragover", (e) => {
      e.preventDefault();
      zone.classList.add("dragging");
    });
    zone.addEventListener("dragleave", () => zone.classList.remove("dragging"));
    zone.addEventListener("drop", (e) => {
      e.preventDefault();
      zone.classList.remove("dragging");
      const file = e.dataTransfer?.files?.[0];
      if (file) this.submit(file);
    });
    input.addEventListener("change", () => {
      const file = input.files?.[0];
      if (file) this.submit(file);
    });
    void this.refresh();
    this.pollTimer = window.setInterval(() => void this.refresh(), 1500);
  }

  dispose(): void {
    if (this.pollTimer !== null) window.clearInterval(this.pollTimer);
  }

  private async submit(file: File): Promise<void> {
    const errorEl = this.root.querySelector("#upload-error") as HTMLElement;
    errorEl.textContent = "";
    try {
      await submitJob(file);
      await this.refresh();
    } catch (err) {
      // API errors surface verbatim; no silent retry
      errorEl.textContent =
        err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
    }
  }

  private async refresh(): Promise<void> {
    let jobs: JobSummary[];
    try {
      jobs = await listJobs();
    } catch {
      return; // transient; next poll will retry
    }
    const gallery = this.root.querySelector("#job-gallery") as HTMLElement;
    gallery.innerHTML = "";
    for (const job of jobs) {
      const card = document.createElement("div");
      card.className = `job-card ${job.state}`;
      const counts = Object.entries(job.counts ?? {})
        .map(([k, v]) => `${v} ${k}`)
        .join(", ");
      card.innerHTML =
        `<strong>${job.input_name}</strong>` +
        `<span class="state">${job.state}</span>` +
        `<span>${counts || ""}</span>` +
        (job.error ? `<span class="error">${job.error}</span>` : "");
      if (job.state === "done") {
        card.addEventListener("click", () => this.onOpen(job.id));
        card.classList.add("clickable");
      }
      gallery.appendChild(card);
    }
  }
}
