// DOM rendering for result cards, the similarity gauge, the classify table
// and the synchronized compare view. All values come straight from the API.

import type { ClassifyResult, ExplainResult, HistoryRecord } from "./api.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

/** Grayscale spectrogram with the mask heatmap alpha-blended on top. */
export function overlay(spectrogramUrl: string, maskUrl: string, opacity: number): HTMLElement {
  const wrap = el("div", "overlay");
  const spec = el("img", "overlay-spec");
  spec.src = spectrogramUrl;
  spec.style.filter = "grayscale(100%)";
  const mask = el("img", "overlay-mask");
  mask.src = maskUrl;
  mask.style.opacity = String(opacity);
  wrap.append(spec, mask);
  return wrap;
}

/** Similarity gauge over the cosine range [-1, 1]. */
export function similarityGauge(value: number): HTMLElement {
  const gauge = el("div", "gauge");
  const fill = el("div", "gauge-fill");
  const clamped = Math.max(-1, Math.min(1, value));
  fill.style.width = `${(50 * (clamped + 1)).toFixed(1)}%`;
  fill.classList.add(clamped >= 0 ? "gauge-pos" : "gauge-neg");
  const label = el("span", "gauge-label", `sim ${value.toFixed(3)}`);
  gauge.append(fill, label);
  return gauge;
}

export function resultCard(
  result: ExplainResult,
  spectrogramUrl: string,
  opacity: number,
): HTMLElement {
  const card = el("div", "card result-card");
  card.append(el("h3", "card-title", `Explain '${result.prompt}'`));
  card.append(overlay(spectrogramUrl, result.mask_url, opacity));
  card.append(similarityGauge(result.similarity_original));
  const badge = el("span", "badge", `mask mean ${result.mask_mean.toFixed(3)}`);
  card.append(badge);
  card.append(el("div", "muted", `masked similarity ${result.similarity_masked.toFixed(3)}`));
  if (result.audio_url) {
    const audio = el("audio", "player");
    audio.controls = true;
    audio.src = result.audio_url;
    card.append(audio);
  }
  return card;
}

export function historyList(
  records: HistoryRecord[],
  selected: number[],
  onToggle: (index: number) => void,
): HTMLElement {
  const list = el("div", "history");
  records.forEach((record, index) => {
    const row = el("div", "history-row" + (selected.includes(index) ? " selected" : ""));
    row.append(el("span", "history-prompt", record.prompt));
    row.append(el("span", "history-sim", `sim ${record.similarity.toFixed(2)}`));
    row.append(el("span", "history-mm", `mm ${record.mask_mean.toFixed(2)}`));
    row.addEventListener("click", () => onToggle(index));
    list.append(row);
  });
  return list;
}

/** Two history entries side by side with synchronized zoom/pan. */
export function compareView(
  a: HistoryRecord,
  b: HistoryRecord,
  spectrogramUrl: string,
  opacity: number,
): HTMLElement {
  const wrap = el("div", "compare");
  const panes: HTMLElement[] = [];
  for (const record of [a, b]) {
    const pane = el("div", "compare-pane");
    pane.append(el("div", "compare-caption", `Explain '${record.prompt}' Sim=${record.similarity.toFixed(2)}`));
    const view = overlay(spectrogramUrl, record.mask_url, opacity);
    view.classList.add("zoomable");
    pane.append(view);
    panes.push(view);
    wrap.append(pane);
  }
  let scale = 1;
  let originX = 50;
  const apply = () => {
    for (const pane of panes) {
      pane.style.transformOrigin = `${originX}% 50%`;
      pane.style.transform = `scale(${scale})`;
    }
  };
  wrap.addEventListener("wheel", (event) => {
    event.preventDefault();
    scale = Math.max(1, Math.min(8, scale * (event.deltaY < 0 ? 1.15 : 1 / 1.15)));
    const rect = wrap.getBoundingClientRect();
    originX = Math.max(0, Math.min(100, (100 * (event.clientX - rect.left)) / rect.width));
    apply(); // zoom on one pans both: shared transform state
  });
  return wrap;
}

export function classifyTable(
  result: ClassifyResult,
  onPick: (prompt: string) => void,
): HTMLElement {
  const table = el("table", "classify-table");
  const head = el("tr");
  for (const h of ["label", "probability"]) head.append(el("th", undefined, h));
  table.append(head);
  result.labels.forEach((label, i) => {
    const row = el("tr", i === result.predicted_index ? "predicted" : "");
    row.append(el("td", undefined, label));
    row.append(el("td", undefined, `${(100 * result.probabilities[i]).toFixed(1)}%`));
    row.addEventListener("click", () => onPick(result.prompts[i]));
    table.append(row);
  });
  return table;
}

export function inlineError(message: string): HTMLElement {
  return el("div", "error", message);
}
