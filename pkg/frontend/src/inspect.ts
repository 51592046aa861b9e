// Zoomable overlay canvas with a live confidence slider and per-object
// exclusion toggles.  The slider and toggles re-filter entirely client-side
// from the detection list; no server round trips.

import { overlayUrl } from "./api.js";
import { summarize, toggleExclusion, visibleSet, withCutoff, applyPreset, PRESET_CONFIDENCE } from "./state.js";
import { loadCuration, saveCuration } from "./storage.js";
import type { CurationState, DetectionView, JobSummary } from "./types.js";

const CLASS_COLORS: Record<string, string> = {
  fiber: "rgba(220, 60, 60, 0.9)",
  vessel: "rgba(60, 90, 220, 0.9)",
};

interface View {
  scale: number; // canvas px per image px
  offsetX: number;
  offsetY: number;
}

export class InspectView {
  private job: JobSummary;
  private state: CurationState;
  private image = new Image();
  private imageReady = false;
  private view: View = { scale: 1, offsetX: 0, offsetY: 0 };
  private canvas: HTMLCanvasElement;
  private root: HTMLElement;
  private onChange: (state: CurationState) => void;
  private dragging = false;
  private lastX = 0;
  private lastY = 0;

  constructor(
    root: HTMLElement,
    job: JobSummary,
    onChange: (state: CurationState) => void,
  ) {
    this.root = root;
    this.job = job;
    this.onChange = onChange;
    this.state = loadCuration(job.id);
    root.innerHTML = `
      <div class="inspect-toolbar">
        <label>confidence &ge; <span id="cutoff-label">0.00</span></label>
        <input type="range" id="cutoff" min="0" max="1" step="0.01" value="0" />
        <button id="preset" title="published F1-optimal operating point">preset ${PRESET_CONFIDENCE}</button>
        <span id="summary" class="summary"></span>
      </div>
      <div class="inspect-body">
        <canvas id="overlay-canvas" width="900" height="640"></canvas>
        <div class="detection-table-wrap">
          <table class="detection-table">
            <thead><tr>
              <th>id</th><th>class</th><th>conf</th>
              <th>len µm</th><th>wid µm</th><th>area µm²</th><th></th>
            </tr></thead>
            <tbody id="detection-rows"></tbody>
          </table>
        </div>
      </div>`;
    this.canvas = root.querySelector("#overlay-canvas") as HTMLCanvasElement;

    const slider = root.querySelector("#cutoff") as HTMLInputElement;
    slider.value = String(this.state.cutoff);
    slider.addEventListener("input", () => {
      this.update(withCutoff(this.state, Number(slider.value)));
    });
    (root.querySelector("#preset") as HTMLButtonElement).addEventListener(
      "click",
      () => {
        this.update(applyPreset(this.state));
        slider.value = String(this.state.cutoff);
      },
    );

    this.canvas.addEventListener("wheel", (e) => this.onWheel(e));
    this.canvas.addEventListener("mousedown", (e) => {
      this.dragging = true;
      this.lastX = e.offsetX;
      this.lastY = e.offsetY;
    });
    this.canvas.addEventListener("mousemove", (e) => {
      if (!this.dragging) return;
      this.view.offsetX += e.offsetX - this.lastX;
      this.view.offsetY += e.offsetY - this.lastY;
      this.lastX = e.offsetX;
      this.lastY = e.offsetY;
      this.draw();
    });
    window.addEventListener("mouseup", () => (this.dragging = false));
    this.canvas.addEventListener("click", (e) => this.onClick(e));

    this.image.onload = () => {
      this.imageReady = true;
      this.fit();
      this.render();
    };
    this.image.src = overlayUrl(job.id);
    this.render();
  }

  private get detections(): DetectionView[] {
    return this.job.detections ?? [];
  }

  private update(state: CurationState): void {
    this.state = state;
    saveCuration(this.job.id, state);
    this.onChange(state);
    this.render();
  }

  // image px -> canvas px, accounting for overlay downscaling
  private imageToCanvas(x: number, y: number): [number, number] {
    const k = this.displayScale();
    return [
      x * k * this.view.scale + this.view.offsetX,
      y * k * this.view.scale + this.view.offsetY,
    ];
  }

  private canvasToImage(x: number, y: number): [number, number] {
    const k = this.displayScale();
    return [
      (x - this.view.offsetX) / (k * this.view.scale),
      (y - this.view.offsetY) / (k * this.view.scale),
    ];
  }

  private displayScale(): number {
    if (!this.job.image_size || !this.imageReady) return 1;
    return this.image.width / this.job.image_size[0];
  }

  private fit(): void {
    const fit = Math.min(
      this.canvas.width / this.image.width,
      this.canvas.height / this.image.height,
    );
    this.view = { scale: fit, offsetX: 0, offsetY: 0 };
  }

  private onWheel(e: WheelEvent): void {
    e.preventDefault();
    const factor = e.deltaY < 0 ? 1.2 : 1 / 1.2;
    const [ix, iy] = this.canvasToImage(e.offsetX, e.offsetY);
    this.view.scale *= factor;
    const [cx, cy] = this.imageToCanvas(ix, iy);
    this.view.offsetX += e.offsetX - cx;
    this.view.offsetY += e.offsetY - cy;
    this.draw();
  }

  private onClick(e: MouseEvent): void {
    if (this.dragging) return;
    const [ix, iy] = this.canvasToImage(e.offsetX, e.offsetY);
    // topmost (highest-confidence) hit wins
    const hits = visibleSet(this.detections, {
      cutoff: this.state.cutoff,
      exclusions: new Set(),
    }).filter((d) => pointInPolygon(ix, iy, d.contour));
    if (hits.length > 0) {
      this.update(toggleExclusion(this.state, hits[0].object_id));
    }
  }

  render(): void {
    const visible = visibleSet(this.detections, this.state);
    const stats = summarize(visible);
    const label = this.root.querySelector("#cutoff-label");
    if (label) label.textContent = this.state.cutoff.toFixed(2);
    const summary = this.root.querySelector("#summary");
    if (summary) {
      const per = Object.entries(stats.perClass)
        .map(([k, v]) => `${v} ${k}`)
        .join(", ");
      summary.textContent =
        `${stats.count} visible (${per || "none"}) | mean length ` +
        `${stats.meanLength.toFixed(1)} µm, width ${stats.meanWidth.toFixed(1)} µm, ` +
        `area ${stats.meanArea.toFixed(0)} µm²`;
    }
    this.renderTable(visible);
    this.draw();
  }

  private renderTable(visible: DetectionView[]): void {
    const tbody = this.root.querySelector("#detection-rows");
    if (!tbody) return;
    tbody.innerHTML = "";
    const excluded = this.detections.filter((d) =>
      this.state.exclusions.has(d.object_id),
    );
    for (const d of visible) {
      tbody.appendChild(this.row(d, false));
    }
    for (const d of excluded) {
      tbody.appendChild(this.row(d, true));
    }
  }

  private row(d: DetectionView, isExcluded: boolean): HTMLTableRowElement {
    const tr = document.createElement("tr");
    if (isExcluded) tr.className = "excluded";
    tr.innerHTML =
      `<td>${d.object_id}</td><td>${d.class}</td>` +
      `<td>${d.confidence.toFixed(2)}</td>` +
      `<td>${d.length_um.toFixed(1)}</td><td>${d.width_um.toFixed(1)}</td>` +
      `<td>${d.area_um2.toFixed(0)}</td>`;
    const td = document.createElement("td");
    const btn = document.createElement("button");
    btn.textContent = isExcluded ? "include" : "exclude";
    btn.addEventListener("click", () =>
      this.update(toggleExclusion(this.state, d.object_id)),
    );
    td.appendChild(btn);
    tr.appendChild(td);
    return tr;
  }

  private draw(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    if (this.imageReady) {
      ctx.save();
      ctx.translate(this.view.offsetX, this.view.offsetY);
      ctx.scale(this.view.scale, this.view.scale);
      ctx.drawImage(this.image, 0, 0);
      ctx.restore();
    }
    const k = this.displayScale();
    for (const d of visibleSet(this.detections, this.state)) {
      ctx.strokeStyle = CLASS_COLORS[d.class] ?? "rgba(90, 180, 70, 0.9)";
      ctx.lineWidth = 2;
      ctx.beginPath();
      d.contour.forEach(([x, y], i) => {
        const [cx, cy] = [
          x * k * this.view.scale + this.view.offsetX,
          y * k * this.view.scale + this.view.offsetY,
        ];
        if (i === 0) ctx.moveTo(cx, cy);
        else ctx.lineTo(cx, cy);
      });
      ctx.closePath();
      ctx.stroke();
    }
  }

  get curation(): CurationState {
    return this.state;
  }
}

export function pointInPolygon(
  x: number,
  y: number,
  polygon: Array<[number, number]>,
): boolean {
  let inside = false;
  for (let i = 0, j = polygon.length - 1; i < polygon.length; j = i++) {
    const [xi, yi] = polygon[i];
    const [xj, yj] = polygon[j];
    if (yi > y !== yj > y && x < ((xj - xi) * (y - yi)) / (yj - yi) + xi) {
      inside = !inside;
    }
  }
  return inside;
}
