/** Typed client for the annotation service HTTP API. */

import type {
  BatchPayload,
  NoWorkPayload,
  SubmissionOut,
  SubmitOutcome,
  ValidationFailureCode,
} from "./types.js";

function isBatchItem(raw: unknown): raw is BatchPayload["items"][number] {
  const item = raw as Record<string, unknown> | null;
  return (
    typeof item?.pair_id === "string" &&
    typeof item?.image_url === "string" &&
    Array.isArray(item?.hypothesis) &&
    (item.hypothesis as unknown[]).every((t) => typeof t === "string")
  );
}

/** Shape guard: a malformed payload must surface as an error, not a crash. */
export function assertBatchPayload(raw: unknown): BatchPayload | NoWorkPayload {
  const payload = raw as Record<string, unknown> | null;
  if (payload?.status === "no_work") {
    return { status: "no_work" };
  }
  if (
    payload?.status !== "ok" ||
    typeof payload.batch_id !== "string" ||
    !Array.isArray(payload.items) ||
    !payload.items.every(isBatchItem)
  ) {
    throw new Error("malformed batch payload");
  }
  return {
    status: "ok",
    batch_id: payload.batch_id,
    items: payload.items,
  };
}

export class ApiClient {
  constructor(private baseUrl: string = "") {}

  async fetchBatch(workerId: string): Promise<BatchPayload | NoWorkPayload> {
    const response = await fetch(
      `${this.baseUrl}/api/batch?worker_id=${encodeURIComponent(workerId)}`,
    );
    if (response.status === 403) {
      const body = await response.json();
      throw new Error(`not authorized: ${body.detail}`);
    }
    if (!response.ok) {
      throw new Error(`batch request failed with status ${response.status}`);
    }
    return assertBatchPayload(await response.json());
  }

  async submitBatch(
    workerId: string,
    batchId: string,
    submissions: SubmissionOut[],
  ): Promise<SubmitOutcome> {
    let response: Response;
    try {
      response = await fetch(`${this.baseUrl}/api/submit`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({
          worker_id: workerId,
          batch_id: batchId,
          submissions,
        }),
      });
    } catch (error) {
      return { kind: "error", message: `network failure: ${String(error)}` };
    }
    if (response.status === 200) {
      return { kind: "accepted" };
    }
    const body = await response.json().catch(() => ({}));
    if (response.status === 403) {
      // the server never says which item was the quality check
      return { kind: "quality_rejected", message: body.detail ?? "quality check failed" };
    }
    if (response.status === 422 && body.item_failures) {
      const itemFailures = new Map<number, ValidationFailureCode[]>();
      for (const [index, codes] of Object.entries(body.item_failures)) {
        itemFailures.set(Number(index), codes as ValidationFailureCode[]);
      }
      return { kind: "validation_rejected", itemFailures };
    }
    return {
      kind: "error",
      message: `submit failed with status ${response.status}: ${JSON.stringify(body)}`,
    };
  }
}
