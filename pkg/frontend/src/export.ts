// Curated downloads: server CSV filtered by the current cutoff/exclusions.

import { fetchCsv, masksUrl } from "./api.js";
import { curateCsv, visibleSet } from "./state.js";
import type { CurationState, JobSummary } from "./types.js";

export async function downloadCuratedCsv(
  job: JobSummary,
  state: CurationState,
): Promise<void> {
  const serverCsv = await fetchCsv(job.id);
  const visible = visibleSet(job.detections ?? [], state);
  const ids = new Set(visible.map((d) => d.object_id));
  const curated = curateCsv(serverCsv, ids, state);
  triggerDownload(
    new Blob([curated], { type: "text/csv" }),
    `${job.id}_curated.csv`,
  );
}

export function downloadMasks(job: JobSummary): void {
  const a = document.createElement("a");
  a.href = masksUrl(job.id);
  a.download = `${job.id}_masks.zip`;
  a.click();
}

function triggerDownload(blob: Blob, filename: string): void {
  const url = URL.createObjectURL(blob);
  const a = document.createElement("a");
  a.href = url;
  a.download = filename;
  a.click();
  URL.revokeObjectURL(url);
}
