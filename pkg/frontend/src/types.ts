// Wire types for the annotation service JSON API.

export interface RegionGeometry {
  image_id: string;
  top: number;
  left: number;
  width: number;
  height: number;
}

export interface SuggestedRegion extends RegionGeometry {
  score: number;
}

export interface SuggestionBatch {
  batch_id: string;
  model_step: number;
  regions: SuggestedRegion[];
}

export interface MetricsRow {
  step: number;
  strategy: string;
  acq_fn: string;
  seed: number;
  labeled_pixels: number;
  f1: number;
  dice_obj: number;
  jaccard: number;
  nll: number;
  ece: number;
  brier: number;
  rel: number;
  res: number;
  unc: number;
}

export interface ServiceState {
  phase: "IDLE" | "SUGGESTING" | "TRAINING";
  step: number;
  labeled_pixels: number;
  batch_id: string | null;
  classes: number;
  metrics: MetricsRow | null;
}

export interface OverlayPayload {
  image_id: string;
  height: number;
  width: number;
  image_png: string; // base64
  pseudo_labels_png: string; // base64
  regions: SuggestedRegion[];
  annotated_regions: RegionGeometry[];
}

export interface RegionSubmission extends RegionGeometry {
  labels: number[][];
}

export interface SubmissionPayload {
  batch_id: string;
  regions: RegionSubmission[];
}

export interface SubmissionAck {
  labeled_pixels: number;
  step: number;
  training: boolean;
}
