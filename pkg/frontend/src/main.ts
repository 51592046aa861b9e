import { ApiError, getJob } from "./api.js";
import { downloadCuratedCsv, downloadMasks } from "./export.js";
import { InspectView } from "./inspect.js";
import { UploadView } from "./upload.js";
import type { JobSummary } from "./types.js";

const app = document.getElementById("app") as HTMLElement;
let uploadView: UploadView | null = null;

function showGallery(): void {
  app.innerHTML = "";
  const header = document.createElement("div");
  header.className = "header";
  header.innerHTML = "<h1>fiberscope</h1><p>fiber & vessel morphometry</p>";
  const container = document.createElement("div");
  app.append(header, container);
  uploadView?.dispose();
  uploadView = new UploadView(container, (id) => void showJob(id));
}

async function showJob(id: string): Promise<void> {
  uploadView?.dispose();
  uploadView = null;
  let job: JobSummary;
  try {
    job = await getJob(id);
  } catch (err) {
    app.innerHTML = `<p class="error">${
      err instanceof ApiError ? `${err.code}: ${err.message}` : String(err)
    }</p>`;
    return;
  }
  if (job.state !== "done") {
    app.innerHTML = `<p>job ${id} is ${job.state}; <a href="#">refresh</a></p>`;
    app.querySelector("a")?.addEventListener("click", (e) => {
      e.preventDefault();
      void showJob(id);
    });
    return;
  }
  app.innerHTML = "";
  const bar = document.createElement("div");
  bar.className = "header";
  bar.innerHTML =
    `<button id="back">&larr; jobs</button>` +
    `<h2>${job.input_name}</h2>` +
    `<button id="dl-csv">download curated CSV</button>` +
    `<button id="dl-masks">download masks</button>`;
  const body = document.createElement("div");
  app.append(bar, body);

  const inspect = new InspectView(body, job, () => undefined);
  (bar.querySelector("#back") as HTMLButtonElement).addEventListener(
    "click",
    showGallery,
  );
  (bar.querySelector("#dl-csv") as HTMLButtonElement).addEventListener(
    "click",
    () => void downloadCuratedCsv(job, inspect.curation),
  );
  (bar.querySelector("#dl-masks") as HTMLButtonElement).addEventListener(
    "click",
    () => downloadMasks(job),
  );
}

showGallery();
