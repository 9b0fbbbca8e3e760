/** Application bootstrap: resolve the worker, fetch a batch, render. */

import { ApiClient } from "./api.js";
import { initState, type TaskViewState } from "./state.js";
import { renderFatal, renderNoWork, renderTask, submitFlow } from "./view.js";

const client = new ApiClient("");
const storage = window.localStorage;

function workerId(): string {
  const params = new URLSearchParams(window.location.search);
  return params.get("worker") ?? "anonymous";
}

async function loadBatch(root: HTMLElement): Promise<void> {
  let payload;
  try {
    payload = await client.fetchBatch(workerId());
  } catch (error) {
    renderFatal(root, String(error), () => void loadBatch(root));
    return;
  }
  if (payload.status === "no_work") {
    renderNoWork(root);
    return;
  }
  const state = initState(payload, storage);
  mount(root, state);
}

function mount(root: HTMLElement, state: TaskViewState): void {
  const handlers = {
    onSubmit: () => {
      void submitFlow(state, client, workerId(), storage).then(() =>
        renderTask(root, state, handlers, storage),
      );
    },
    onRetry: () => handlers.onSubmit(),
    onNextBatch: () => void loadBatch(root),
  };
  renderTask(root, state, handlers, storage);
}

const root = document.getElementById("app");
if (root) {
  void loadBatch(root);
}
