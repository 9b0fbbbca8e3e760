/**
 * In-browser submission checks.
 *
 * This mirrors the server's rules exactly; the shared conformance fixture
 * (tests/fixtures/validation_conformance.jsonl in the repository root)
 * pins the two implementations together case by case. Any change here must
 * keep 200/200 agreement.
 */

import type { Draft, ValidationFailureCode, ValidationResult } from "./types.js";

/** ASCII punctuation, identical to the server's set. */
const PUNCTUATION = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";
const PUNCT_SET = new Set(PUNCTUATION.split(""));

/** Lowercase, detach punctuation into standalone tokens, split on whitespace. */
export function tokenize(text: string): string[] {
  const chars: string[] = [];
  for (const ch of text.toLowerCase()) {
    if (PUNCT_SET.has(ch)) {
      chars.push(` ${ch} `);
    } else {
      chars.push(ch);
    }
  }
  return chars.join("").split(/\s+/).filter((t) => t.length > 0);
}

/** Lowercase with leading/trailing punctuation stripped. */
export function normalizeToken(token: string): string {
  let out = token.toLowerCase();
  let start = 0;
  let end = out.length;
  while (start < end && PUNCT_SET.has(out[start])) start++;
  while (end > start && PUNCT_SET.has(out[end - 1])) end--;
  return out.slice(start, end);
}

/**
 * Validate one draft against its hypothesis tokens.
 *
 * Failure conditions, in reporting order:
 *  - NO_LABEL: no label chosen;
 *  - NO_HIGHLIGHT: nothing highlighted;
 *  - TOO_FEW_HIGHLIGHTED_USED: fewer than half of the highlighted words
 *    appear (normalized) in the explanation (2*used < highlighted);
 *  - HYPOTHESIS_COPY: the explanation tokenizes to exactly the hypothesis.
 */
export function validateDraft(hypothesis: string[], draft: Draft): ValidationResult {
  const failures: ValidationFailureCode[] = [];
  if (draft.label === null) {
    failures.push("NO_LABEL");
  }
  const highlighted = [...new Set(draft.highlighted)];
  if (highlighted.length === 0) {
    failures.push("NO_HIGHLIGHT");
  } else {
    const explanationTokens = new Set(tokenize(draft.explanation));
    let used = 0;
    for (const index of highlighted) {
      const norm = normalizeToken(hypothesis[index]);
      if (norm.length > 0 && explanationTokens.has(norm)) {
        used += 1;
      }
    }
    if (2 * used < highlighted.length) {
      failures.push("TOO_FEW_HIGHLIGHTED_USED");
    }
  }
  const explanationSeq = tokenize(draft.explanation);
  const hypothesisSeq = tokenize(hypothesis.join(" "));
  if (
    explanationSeq.length === hypothesisSeq.length &&
    explanationSeq.every((t, i) => t === hypothesisSeq[i])
  ) {
    failures.push("HYPOTHESIS_COPY");
  }
  return { ok: failures.length === 0, failures };
}
