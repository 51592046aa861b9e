export interface DetectionView {
  object_id: number;
  class: string;
  confidence: number;
  bbox: [number, number, number, number];
  contour: Array<[number, number]>;
  length_um: number;
  width_um: number;
  area_um2: number;
}

export interface JobSummary {
  id: string;
  state: "queued" | "running" | "done" | "failed";
  created: number;
  finished: number | null;
  input_name: string;
  image_size: [number, number] | null;
  error: string | null;
  warnings: string[];
  counts: Record<string, number>;
  detections?: DetectionView[];
  exports?: { csv: string; masks: string; overlay: string };
}

export interface CurationState {
  cutoff: number;
  exclusions: Set<number>;
}

export interface SummaryStats {
  count: number;
  meanLength: number;
  meanWidth: number;
  meanArea: number;
  perClass: Record<string, number>;
}
