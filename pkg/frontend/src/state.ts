/**
 * Task view state: per-item drafts, live validation, and submission status.
 *
 * Drafts autosave to storage keyed by batch id, so a page reload never
 * loses work. The submit control is enabled only when all ten drafts
 * validate client-side.
 */

import { validateDraft } from "./validation.js";
import type {
  BatchPayload,
  Draft,
  LabelValue,
  SubmissionOut,
  SubmitOutcome,
  ValidationFailureCode,
  ValidationResult,
} from "./types.js";

export type SubmissionStatus =
  | "editing"
  | "submitting"
  | "quality_rejected"
  | "validation_rejected"
  | "accepted"
  | "error";

export interface TaskViewState {
  batch: BatchPayload;
  drafts: Draft[];
  validation: ValidationResult[];
  status: SubmissionStatus;
  statusMessage: string;
  serverItemFailures: Map<number, ValidationFailureCode[]>;
}

/** Minimal storage interface so tests can inject a stub. */
export interface DraftStorage {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

function emptyDraft(): Draft {
  return { label: null, highlighted: [], explanation: "" };
}

function autosaveKey(batchId: string): string {
  return `annotation-drafts:${batchId}`;
}

export function initState(batch: BatchPayload, storage?: DraftStorage): TaskViewState {
  let drafts = batch.items.map(emptyDraft);
  const saved = storage?.getItem(autosaveKey(batch.batch_id));
  if (saved) {
    try {
      const parsed = JSON.parse(saved) as Draft[];
      if (Array.isArray(parsed) && parsed.length === batch.items.length) {
        drafts = parsed.map((d) => ({
          label: d.label ?? null,
          highlighted: [...(d.highlighted ?? [])],
          explanation: d.explanation ?? "",
        }));
      }
    } catch {
      // corrupt autosave: start fresh
    }
  }
  const state: TaskViewState = {
    batch,
    drafts,
    validation: [],
    status: "editing",
    statusMessage: "",
    serverItemFailures: new Map(),
  };
  revalidate(state);
  return state;
}

function revalidate(state: TaskViewState): void {
  state.validation = state.drafts.map((draft, i) =>
    validateDraft(state.batch.items[i].hypothesis, draft),
  );
}

function persist(state: TaskViewState, storage?: DraftStorage): void {
  storage?.setItem(autosaveKey(state.batch.batch_id), JSON.stringify(state.drafts));
}

export function setLabel(
  state: TaskViewState,
  index: number,
  label: LabelValue,
  storage?: DraftStorage,
): void {
  state.drafts[index].label = label;
  afterEdit(state, storage);
}

export function toggleToken(
  state: TaskViewState,
  index: number,
  tokenIndex: number,
  storage?: DraftStorage,
): void {
  const highlighted = state.drafts[index].highlighted;
  const position = highlighted.indexOf(tokenIndex);
  if (position >= 0) {
    highlighted.splice(position, 1);
  } else {
    highlighted.push(tokenIndex);
    highlighted.sort((a, b) => a - b);
  }
  afterEdit(state, storage);
}

export function setExplanation(
  state: TaskViewState,
  index: number,
  explanation: string,
  storage?: DraftStorage,
): void {
  state.drafts[index].explanation = explanation;
  afterEdit(state, storage);
}

function afterEdit(state: TaskViewState, storage?: DraftStorage): void {
  if (state.status !== "submitting") {
    state.status = "editing";
    state.statusMessage = "";
  }
  revalidate(state);
  persist(state, storage);
}

/** Submit is allowed only when every draft passes the in-browser checks. */
export function canSubmit(state: TaskViewState): boolean {
  return (
    state.status !== "submitting" && state.validation.every((result) => result.ok)
  );
}

export function toSubmissions(state: TaskViewState): SubmissionOut[] {
  return state.batch.items.map((item, i) => ({
    pair_id: item.pair_id,
    label: state.drafts[i].label,
    highlighted: [...state.drafts[i].highlighted],
    explanation: state.drafts[i].explanation,
  }));
}

export function applyOutcome(
  state: TaskViewState,
  outcome: SubmitOutcome,
  storage?: DraftStorage,
): void {
  state.serverItemFailures = new Map();
  switch (outcome.kind) {
    case "accepted":
      state.status = "accepted";
      state.statusMessage = "Batch accepted. Thank you!";
      storage?.removeItem(autosaveKey(state.batch.batch_id));
      break;
    case "quality_rejected":
      // deliberately generic: the trusted item is never identified
      state.status = "quality_rejected";
      state.statusMessage =
        "The quality check failed. Please review all your answers and try again.";
      break;
    case "validation_rejected":
      state.status = "validation_rejected";
      state.statusMessage = "Some items failed validation.";
      state.serverItemFailures = outcome.itemFailures;
      break;
    case "error":
      state.status = "error";
      state.statusMessage = `${outcome.message} - your drafts are preserved; retry when ready.`;
      break;
  }
}
