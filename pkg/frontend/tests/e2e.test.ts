/**
 * Scripted end-to-end session against a real local service:
 * fetch a batch, fill all 10 items, mislabel the hidden quality item
 * (generic rejection, drafts preserved), correct it, and get acceptance.
 *
 * The test knows the gold labels because it generated the fixture
 * workspace; the client code under test never sees them.
 */

import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import {
  applyOutcome,
  canSubmit,
  initState,
  setExplanation,
  setLabel,
  toSubmissions,
  toggleToken,
} from "../src/state.js";
import { normalizeToken } from "../src/validation.js";
import type { BatchPayload, LabelValue } from "../src/types.js";

const PORT = 8600 + (process.pid % 997);
const BASE = `http://127.0.0.1:${PORT}`;

let workspace: string;
let server: ChildProcess | undefined;
let goldLabels: Map<string, LabelValue>;

function readGoldLabels(dir: string): Map<string, LabelValue> {
  const gold = new Map<string, LabelValue>();
  for (const name of ["queue.jsonl", "trusted.jsonl"]) {
    const lines = readFileSync(join(dir, name), "utf-8").split("\n");
    for (const line of lines) {
      if (!line.trim()) continue;
      const record = JSON.parse(line);
      gold.set(record.pair_id, record.label as LabelValue);
    }
  }
  return gold;
}

function trustedIds(dir: string): Set<string> {
  const ids = new Set<string>();
  for (const line of readFileSync(join(dir, "trusted.jsonl"), "utf-8").split("\n")) {
    if (line.trim()) ids.add(JSON.parse(line).pair_id);
  }
  return ids;
}

async function waitForServer(): Promise<void> {
  for (let attempt = 0; attempt < 100; attempt++) {
    try {
      const response = await fetch(`${BASE}/api/health`);
      if (response.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((resolve) => setTimeout(resolve, 200));
  }
  throw new Error("service did not come up");
}

beforeAll(async () => {
  workspace = mkdtempSync(join(tmpdir(), "annotation-e2e-"));
  const setup = spawnSync(
    "python3",
    [
      "-c",
      `from vte.synth import write_demo_workspace; write_demo_workspace(r"${workspace}", seed=3, n_train=12)`,
    ],
    { encoding: "utf-8" },
  );
  if (setup.status !== 0) {
    throw new Error(`workspace setup failed: ${setup.stderr}`);
  }
  goldLabels = readGoldLabels(workspace);
  server = spawn(
    "python3",
    [
      "-m", "vte.cli", "serve",
      "--queue", join(workspace, "queue.jsonl"),
      "--queue-name", "validation",
      "--trusted", join(workspace, "trusted.jsonl"),
      "--workers", join(workspace, "workers.jsonl"),
      "--data-dir", join(workspace, "data"),
      "--port", String(PORT),
    ],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  await waitForServer();
});

afterAll(() => {
  server?.kill("SIGTERM");
  rmSync(workspace, { recursive: true, force: true });
});

describe("scripted annotation session", () => {
  it("completes reject-then-accept against the live service", async () => {
    const client = new ApiClient(BASE);

    const payload = await client.fetchBatch("w01");
    expect(payload.status).toBe("ok");
    const batch = payload as BatchPayload;
    expect(batch.items.length).toBe(10);
    // the payload must not leak the trusted position or any labels
    expect(JSON.stringify(payload)).not.toMatch(/trusted|label/);

    const trusted = trustedIds(workspace);
    const trustedIndex = batch.items.findIndex((item) => trusted.has(item.pair_id));
    expect(trustedIndex).toBeGreaterThanOrEqual(0);

    const state = initState(batch);
    batch.items.forEach((item, index) => {
      setLabel(state, index, goldLabels.get(item.pair_id)!);
      toggleToken(state, index, 0);
      const word = normalizeToken(item.hypothesis[0]);
      setExplanation(state, index, `the ${word} is the important part here`);
    });
    expect(canSubmit(state)).toBe(true);

    // mislabel the hidden quality item (still valid client-side)
    const gold = goldLabels.get(batch.items[trustedIndex].pair_id)!;
    const wrong: LabelValue = gold === "neutral" ? "entailment" : "neutral";
    setLabel(state, trustedIndex, wrong);
    expect(canSubmit(state)).toBe(true);

    const rejection = await client.submitBatch("w01", batch.batch_id, toSubmissions(state));
    expect(rejection.kind).toBe("quality_rejected");
    applyOutcome(state, rejection);
    expect(state.status).toBe("quality_rejected");
    // generic message: no item is identified
    expect(state.statusMessage).not.toMatch(/\b(item|pair|position)\s*\d/i);
    expect(state.serverItemFailures.size).toBe(0);
    // drafts survive the rejection
    expect(state.drafts.every((draft) => draft.explanation.length > 0)).toBe(true);

    // correct the label and resubmit the same open batch
    setLabel(state, trustedIndex, gold);
    const acceptance = await client.submitBatch("w01", batch.batch_id, toSubmissions(state));
    expect(acceptance.kind).toBe("accepted");
    applyOutcome(state, acceptance);
    expect(state.status).toBe("accepted");

    // nine work records persisted, none for the trusted pair
    const exported = await fetch(`${BASE}/api/export?split=validation`);
    const lines = (await exported.text()).trim().split("\n").filter(Boolean);
    expect(lines.length).toBe(9);
    for (const line of lines) {
      expect(trusted.has(JSON.parse(line).pair_id)).toBe(false);
    }
  });

  it("rejects per-item validation failures with the failing index", async () => {
    const client = new ApiClient(BASE);
    const payload = await client.fetchBatch("w02");
    expect(payload.status).toBe("ok");
    const batch = payload as BatchPayload;

    const state = initState(batch);
    batch.items.forEach((item, index) => {
      setLabel(state, index, goldLabels.get(item.pair_id)!);
      toggleToken(state, index, 0);
      const word = normalizeToken(item.hypothesis[0]);
      setExplanation(state, index, `the ${word} is the important part here`);
    });
    // force a server-side failure the client gate would normally block
    const submissions = toSubmissions(state);
    submissions[4] = { ...submissions[4], highlighted: [] };
    const outcome = await client.submitBatch("w02", batch.batch_id, submissions);
    expect(outcome.kind).toBe("validation_rejected");
    if (outcome.kind === "validation_rejected") {
      expect(outcome.itemFailures.get(4)).toEqual(["NO_HIGHLIGHT"]);
      applyOutcome(state, outcome);
      expect(state.status).toBe("validation_rejected");
      expect(state.serverItemFailures.has(4)).toBe(true);
    }
  });

  it("reports no_work when the queue is exhausted for a worker", async () => {
    const client = new ApiClient(BASE);
    // the queue has 9 unsaturated pairs at most for w01 after its accept;
    // drain with other workers until someone sees no_work
    for (const worker of ["w03", "w04", "w05", "w06"]) {
      const payload = await client.fetchBatch(worker);
      if (payload.status === "no_work") {
        expect(payload.status).toBe("no_work");
        return;
      }
    }
    // all workers got batches; the queue was deep enough, which is also fine
    expect(true).toBe(true);
  });

  it("refuses workers below the approval threshold", async () => {
    const client = new ApiClient(BASE);
    await expect(client.fetchBatch("w00")).rejects.toThrow(/not authorized/);
  });
});
