/**
 * DOM rendering for the annotation task.
 *
 * Every item panel is rendered the same way; the payload carries no marker
 * for the trusted pair, so there is nothing distinguishing to render.
 * Token highlighting toggles on click; validation messages update live and
 * the submit control stays disabled until all ten drafts pass.
 */

import {
  applyOutcome,
  canSubmit,
  setExplanation,
  setLabel,
  toggleToken,
  toSubmissions,
  type DraftStorage,
  type TaskViewState,
} from "./state.js";
import type { ApiClient } from "./api.js";
import type { LabelValue, ValidationFailureCode } from "./types.js";

const LABEL_GUIDE: { label: LabelValue; definition: string; example: string }[] = [
  {
    label: "entailment",
    definition: "The image gives enough evidence to conclude the sentence is true.",
    example: "Image: children kicking a ball on grass. Sentence: \"kids play outdoors\".",
  },
  {
    label: "neutral",
    definition: "The image neither confirms nor rules out the sentence.",
    example: "Image: a man holding a guitar. Sentence: \"the man plays in a band\".",
  },
  {
    label: "contradiction",
    definition: "The image gives enough evidence to conclude the sentence is false.",
    example: "Image: people standing still. Sentence: \"people are running a marathon\".",
  },
];

const FAILURE_MESSAGES: Record<ValidationFailureCode, string> = {
  NO_LABEL: "Choose a label.",
  NO_HIGHLIGHT: "Highlight at least one word in the sentence.",
  TOO_FEW_HIGHLIGHTED_USED:
    "Use at least half of the highlighted words in your explanation.",
  HYPOTHESIS_COPY: "The explanation must not be a copy of the sentence.",
};

export interface ViewHandlers {
  onSubmit: () => void;
  onNextBatch: () => void;
  onRetry: () => void;
}

export function renderInstructions(root: HTMLElement): void {
  const section = document.createElement("section");
  section.className = "instructions";
  section.innerHTML = `
    <h1>Image / sentence annotation</h1>
    <p>For each of the 10 pairs below: (a) choose the label that best
    describes the relation between the image and the sentence, (b) click the
    words in the sentence that led to your decision, and (c) explain your
    decision concisely, using at least half of the words you highlighted.
    Your explanation must not simply repeat the sentence.</p>
    <p>One of the pairs is a hidden quality-control item; you can submit the
    set only when it is answered correctly.</p>
  `;
  const guide = document.createElement("dl");
  guide.className = "label-guide";
  for (const entry of LABEL_GUIDE) {
    const dt = document.createElement("dt");
    dt.textContent = entry.label;
    const dd = document.createElement("dd");
    dd.textContent = `${entry.definition} Example: ${entry.example}`;
    guide.append(dt, dd);
  }
  section.appendChild(guide);
  root.appendChild(section);
}

function renderItemPanel(
  state: TaskViewState,
  index: number,
  storage: DraftStorage | undefined,
  rerender: () => void,
): HTMLElement {
  const item = state.batch.items[index];
  const draft = state.drafts[index];
  const panel = document.createElement("article");
  panel.className = "item-panel";
  panel.dataset.index = String(index);

  const heading = document.createElement("h2");
  heading.textContent = `Pair ${index + 1} of ${state.batch.items.length}`;
  panel.appendChild(heading);

  const image = document.createElement("img");
  image.src = item.image_url;
  image.alt = "premise image";
  image.className = "premise-image";
  panel.appendChild(image);

  const sentence = document.createElement("p");
  sentence.className = "hypothesis";
  item.hypothesis.forEach((token, tokenIndex) => {
    const span = document.createElement("span");
    span.className = "token";
    span.textContent = token;
    if (draft.highlighted.includes(tokenIndex)) {
      span.classList.add("highlighted");
    }
    span.addEventListener("click", () => {
      toggleToken(state, index, tokenIndex, storage);
      rerender();
    });
    sentence.appendChild(span);
    sentence.appendChild(document.createTextNode(" "));
  });
  panel.appendChild(sentence);

  const labels = document.createElement("div");
  labels.className = "label-choices";
  for (const entry of LABEL_GUIDE) {
    const wrapper = document.createElement("label");
    const radio = document.createElement("input");
    radio.type = "radio";
    radio.name = `label-${index}`;
    radio.value = entry.label;
    radio.checked = draft.label === entry.label;
    radio.addEventListener("change", () => {
      setLabel(state, index, entry.label, storage);
      rerender();
    });
    wrapper.append(radio, document.createTextNode(entry.label));
    labels.appendChild(wrapper);
  }
  panel.appendChild(labels);

  const explanation = document.createElement("textarea");
  explanation.className = "explanation";
  explanation.placeholder = "Explain your decision...";
  explanation.value = draft.explanation;
  explanation.addEventListener("input", () => {
    setExplanation(state, index, explanation.value, storage);
    rerender();
  });
  panel.appendChild(explanation);

  const messages = document.createElement("ul");
  messages.className = "validation-messages";
  for (const failure of state.validation[index].failures) {
    const li = document.createElement("li");
    li.textContent = FAILURE_MESSAGES[failure];
    messages.appendChild(li);
  }
  for (const failure of state.serverItemFailures.get(index) ?? []) {
    const li = document.createElement("li");
    li.className = "server-failure";
    li.textContent = `Server: ${FAILURE_MESSAGES[failure]}`;
    messages.appendChild(li);
  }
  if (state.serverItemFailures.has(index)) {
    panel.classList.add("server-rejected");
  }
  panel.appendChild(messages);
  return panel;
}

export function renderTask(
  root: HTMLElement,
  state: TaskViewState,
  handlers: ViewHandlers,
  storage?: DraftStorage,
): void {
  root.textContent = "";
  renderInstructions(root);

  const rerender = () => renderTask(root, state, handlers, storage);

  const list = document.createElement("div");
  list.className = "item-list";
  state.batch.items.forEach((_, index) => {
    list.appendChild(renderItemPanel(state, index, storage, rerender));
  });
  root.appendChild(list);

  const footer = document.createElement("footer");
  footer.className = "submit-area";

  const status = document.createElement("p");
  status.className = `status status-${state.status}`;
  status.textContent = state.statusMessage;
  footer.appendChild(status);

  if (state.status === "accepted") {
    const next = document.createElement("button");
    next.className = "next-batch";
    next.textContent = "Fetch next batch";
    next.addEventListener("click", handlers.onNextBatch);
    footer.appendChild(next);
  } else if (state.status === "error") {
    const retry = document.createElement("button");
    retry.className = "retry";
    retry.textContent = "Retry submission";
    retry.addEventListener("click", handlers.onRetry);
    footer.appendChild(retry);
  } else {
    const submit = document.createElement("button");
    submit.className = "submit";
    submit.textContent = "Submit all 10";
    submit.disabled = !canSubmit(state);
    submit.addEventListener("click", handlers.onSubmit);
    footer.appendChild(submit);
  }
  root.appendChild(footer);
}

export function renderNoWork(root: HTMLElement): void {
  root.textContent = "";
  const message = document.createElement("p");
  message.className = "no-work";
  message.textContent = "No work is available right now. Please check back later.";
  root.appendChild(message);
}

export function renderFatal(root: HTMLElement, message: string, onRetry: () => void): void {
  root.textContent = "";
  const box = document.createElement("div");
  box.className = "fatal";
  const text = document.createElement("p");
  text.textContent = message;
  const retry = document.createElement("button");
  retry.textContent = "Retry";
  retry.addEventListener("click", onRetry);
  box.append(text, retry);
  root.appendChild(box);
}

export async function submitFlow(
  state: TaskViewState,
  client: ApiClient,
  workerId: string,
  storage?: DraftStorage,
): Promise<void> {
  state.status = "submitting";
  state.statusMessage = "Submitting...";
  const outcome = await client.submitBatch(
    workerId,
    state.batch.batch_id,
    toSubmissions(state),
  );
  applyOutcome(state, outcome, storage);
}
