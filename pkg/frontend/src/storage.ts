// Per-job curation persistence: exclusions survive page reloads.

import type { CurationState } from "./types.js";

const KEY_PREFIX = "fiberscope.curation.";

export function loadCuration(jobId: string): CurationState {
  try {
    const raw = localStorage.getItem(KEY_PREFIX + jobId);
    if (raw) {
      const parsed = JSON.parse(raw);
      return {
        cutoff: typeof parsed.cutoff === "number" ? parsed.cutoff : 0,
        exclusions: new Set<number>(parsed.exclusions ?? []),
      };
    }
  } catch {
    // corrupted storage entry: fall through to defaults
  }
  return { cutoff: 0, exclusions: new Set() };
}

export function saveCuration(jobId: string, state: CurationState): void {
  localStorage.setItem(
    KEY_PREFIX + jobId,
    JSON.stringify({ cutoff: state.cutoff, exclusions: [...state.exclusions] }),
  );
}
