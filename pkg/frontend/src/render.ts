/**
 * DOM views for the rating flow. UI chrome is English; report text is
 * rendered verbatim in its own language. The two summaries are only ever
 * labeled positionally ("Summary A"/"Summary B") — nothing in the DOM
 * identifies where either one came from.
 */

import type { Progress, SessionSummary, Comparison, Score } from "./api.js";
import { COMPARISONS, SCORES, isScore } from "./api.js";
import type { Draft, UiSessionState } from "./state.js";

const COMPARISON_LABELS: Record<Comparison, string> = {
  FIRST_BETTER: "Summary A is better",
  EQUAL: "About the same",
  SECOND_BETTER: "Summary B is better",
};

const SCORE_LABELS: Record<Score, string> = {
  1: "1 (very poor)",
  2: "2",
  3: "3",
  4: "4",
  5: "5 (very good)",
};

const SCORE_FIELDS: ReadonlyArray<{ key: "r" | "fcc" | "oq"; label: string }> = [
  { key: "r", label: "Readability" },
  { key: "fcc", label: "Factual correctness & completeness" },
  { key: "oq", label: "Overall quality" },
];

export interface ItemHandlers {
  onChange(patch: Partial<Draft>): void;
  onSubmit(): void;
}

export interface ItemViewHandle {
  syncSubmit(enabled: boolean): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  children: ReadonlyArray<Node | string> = [],
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  node.append(...children);
  return node;
}

function progressLine(progress: Progress): HTMLElement {
  return el("p", { class: "progress" }, [
    `Rated ${progress.rated} of ${progress.total}`,
  ]);
}

export function renderLoading(root: HTMLElement): void {
  root.replaceChildren(el("p", { class: "loading" }, ["Loading…"]));
}

export function renderItem(
  root: HTMLElement,
  state: UiSessionState,
  handlers: ItemHandlers,
): ItemViewHandle {
  const item = state.item;
  if (item === null) {
    throw new Error("renderItem requires a current item");
  }
  const busy = state.inflight;

  const choices = COMPARISONS.map((value) => {
    const input = el("input", {
      type: "radio",
      name: "comparison",
      value,
      id: `comparison-${value}`,
    });
    input.checked = state.draft.comparison === value;
    input.disabled = busy;
    input.addEventListener("change", () => {
      handlers.onChange({ comparison: value });
    });
    return el("div", { class: "choice" }, [
      input,
      el("label", { for: `comparison-${value}` }, [COMPARISON_LABELS[value]]),
    ]);
  });

  const scoreControls = SCORE_FIELDS.map(({ key, label }) => {
    const select = el("select", { name: key, id: `score-${key}` });
    select.append(el("option", { value: "" }, ["—"]));
    for (const score of SCORES) {
      select.append(el("option", { value: String(score) }, [SCORE_LABELS[score]]));
    }
    select.value = state.draft[key] === null ? "" : String(state.draft[key]);
    select.disabled = busy;
    select.addEventListener("change", () => {
      const parsed = Number(select.value);
      const patch: Partial<Draft> = {};
      patch[key] = select.value !== "" && isScore(parsed) ? parsed : null;
      handlers.onChange(patch);
    });
    return el("div", { class: "score" }, [
      el("label", { for: `score-${key}` }, [label]),
      select,
    ]);
  });

  const submit = el("button", { type: "submit" }, [
    busy ? "Submitting…" : "Submit rating",
  ]);
  submit.disabled = busy || !state.canSubmit();

  const formChildren: Array<Node | string> = [
    el("fieldset", { class: "comparison" }, [
      el("legend", {}, ["Which summary is better?"]),
      ...choices,
    ]),
    el("div", { class: "scores" }, scoreControls),
  ];
  if (state.submitError !== null) {
    formChildren.push(
      el("p", { class: "error", role: "alert" }, [state.submitError]),
    );
  }
  formChildren.push(submit);

  const form = el("form", { class: "rating-form", novalidate: "" }, formChildren);
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    handlers.onSubmit();
  });

  root.replaceChildren(
    el("section", { class: "item-view" }, [
      progressLine(state.progress),
      el("section", { class: "findings" }, [
        el("h2", {}, ["Findings"]),
        el("p", {}, [item.findings]),
      ]),
      el("div", { class: "summaries" }, [
        el("section", { class: "summary" }, [
          el("h2", {}, ["Summary A"]),
          el("p", {}, [item.summaryFirst]),
        ]),
        el("section", { class: "summary" }, [
          el("h2", {}, ["Summary B"]),
          el("p", {}, [item.summarySecond]),
        ]),
      ]),
      form,
    ]),
  );

  return {
    syncSubmit(enabled: boolean): void {
      submit.disabled = busy || !enabled;
    },
  };
}

export function renderSummary(root: HTMLElement, summary: SessionSummary): void {
  const rows: ReadonlyArray<[string, string]> = [
    ["Preferred or equal (%)", summary.geFraction.toFixed(2)],
    ["Readability", summary.meanR.toFixed(2)],
    ["Factual correctness & completeness", summary.meanFcc.toFixed(2)],
    ["Overall quality", summary.meanOq.toFixed(2)],
  ];
  root.replaceChildren(
    el("section", { class: "summary-view" }, [
      el("h1", {}, ["Session summary"]),
      progressLine({ rated: summary.rated, total: summary.total }),
      el(
        "dl",
        {},
        rows.flatMap(([label, value]) => [
          el("dt", {}, [label]),
          el("dd", {}, [value]),
        ]),
      ),
    ]),
  );
}

export function renderNoRatings(root: HTMLElement): void {
  root.replaceChildren(
    el("section", { class: "summary-view" }, [
      el("h1", {}, ["Session summary"]),
      el("p", { class: "empty" }, ["No ratings yet."]),
    ]),
  );
}

export function renderError(
  root: HTMLElement,
  message: string,
  onRetry: () => void,
): void {
  const retry = el("button", { type: "button", class: "retry" }, ["Retry"]);
  retry.addEventListener("click", onRetry);
  root.replaceChildren(
    el("section", { class: "error-view", role: "alert" }, [
      el("h1", {}, ["Something went wrong"]),
      el("p", {}, [message]),
      retry,
    ]),
  );
}
