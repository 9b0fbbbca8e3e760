/** Shared types for the annotation task client. */

export type LabelValue = "entailment" | "neutral" | "contradiction";

export const LABELS: LabelValue[] = ["entailment", "neutral", "contradiction"];

export interface BatchItem {
  pair_id: string;
  image_url: string;
  hypothesis: string[];
}

export interface BatchPayload {
  status: "ok";
  batch_id: string;
  items: BatchItem[];
}

export interface NoWorkPayload {
  status: "no_work";
}

export type ValidationFailureCode =
  | "NO_LABEL"
  | "NO_HIGHLIGHT"
  | "TOO_FEW_HIGHLIGHTED_USED"
  | "HYPOTHESIS_COPY";

export interface ValidationResult {
  ok: boolean;
  failures: ValidationFailureCode[];
}

/** One item's in-progress answer. */
export interface Draft {
  label: LabelValue | null;
  highlighted: number[];
  explanation: string;
}

export interface SubmissionOut {
  pair_id: string;
  label: LabelValue | null;
  highlighted: number[];
  explanation: string;
}

export type SubmitOutcome =
  | { kind: "accepted" }
  | { kind: "quality_rejected"; message: string }
  | { kind: "validation_rejected"; itemFailures: Map<number, ValidationFailureCode[]> }
  | { kind: "error"; message: string };
