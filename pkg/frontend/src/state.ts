// Pure curation logic: what is visible, what gets exported, summary math.
// Rendering and export both derive from (detections, cutoff, exclusions)
// through these functions only, so same state always gives same output.

import type { CurationState, DetectionView, SummaryStats } from "./types.js";

// F1-optimal operating point of the published model, offered as a preset.
export const PRESET_CONFIDENCE = 0.66;

export function visibleSet(
  detections: DetectionView[],
  state: CurationState,
): DetectionView[] {
  return detections.filter(
    (d) => d.confidence >= state.cutoff && !state.exclusions.has(d.object_id),
  );
}

export function summarize(visible: DetectionView[]): SummaryStats {
  const perClass: Record<string, number> = {};
  let sumLength = 0;
  let sumWidth = 0;
  let sumArea = 0;
  for (const d of visible) {
    perClass[d.class] = (perClass[d.class] ?? 0) + 1;
    sumLength += d.length_um;
    sumWidth += d.width_um;
    sumArea += d.area_um2;
  }
  const n = visible.length;
  return {
    count: n,
    meanLength: n ? sumLength / n : 0,
    meanWidth: n ? sumWidth / n : 0,
    meanArea: n ? sumArea / n : 0,
    perClass,
  };
}

// The server CSV is the source of truth; curation filters its data rows
// client-side and records what was applied as comment lines up front.
export function curateCsv(
  serverCsv: string,
  visibleIds: Set<number>,
  state: CurationState,
): string {
  const lines = serverCsv.split("\n");
  const header = lines[0];
  const rows = lines.slice(1).filter((line) => line.length > 0);
  const kept = rows.filter((line) => {
    const id = Number(line.split(",", 1)[0]);
    return visibleIds.has(id);
  });
  const excluded = [...state.exclusions].sort((a, b) => a - b).join(" ");
  const manifest = [
    `# fiberscope curated export`,
    `# confidence_cutoff: ${state.cutoff}`,
    `# excluded_object_ids: ${excluded || "none"}`,
  ];
  return [...manifest, header, ...kept].join("\n") + "\n";
}

// Recompute summary means from an exported curated CSV (used to verify the
// on-screen numbers agree with what gets saved).
export function summarizeCsv(curatedCsv: string): SummaryStats {
  const lines = curatedCsv
    .split("\n")
    .filter((l) => l.length > 0 && !l.startsWith("#"));
  const header = lines[0].split(",");
  const col = (name: string) => header.indexOf(name);
  const iClass = col("class");
  const iLen = col("length_um");
  const iWid = col("width_um");
  const iArea = col("area_um2");
  const perClass: Record<string, number> = {};
  let sumLength = 0;
  let sumWidth = 0;
  let sumArea = 0;
  const rows = lines.slice(1);
  for (const line of rows) {
    const parts = line.split(",");
    perClass[parts[iClass]] = (perClass[parts[iClass]] ?? 0) + 1;
    sumLength += Number(parts[iLen]);
    sumWidth += Number(parts[iWid]);
    sumArea += Number(parts[iArea]);
  }
  const n = rows.length;
  return {
    count: n,
    meanLength: n ? sumLength / n : 0,
    meanWidth: n ? sumWidth / n : 0,
    meanArea: n ? sumArea / n : 0,
    perClass,
  };
}

export function toggleExclusion(state: CurationState, id: number): CurationState {
  const exclusions = new Set(state.exclusions);
  if (exclusions.has(id)) {
    exclusions.delete(id);
  } else {
    exclusions.add(id);
  }
  return { cutoff: state.cutoff, exclusions };
}

export function withCutoff(state: CurationState, cutoff: number): CurationState {
  return { cutoff, exclusions: state.exclusions };
}

export function applyPreset(state: CurationState): CurationState {
  return withCutoff(state, PRESET_CONFIDENCE);
}
