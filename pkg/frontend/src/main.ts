// Wires the explorer together: upload / classify / prompt loop against the
// API, with all shown quantities taken from server responses.

import { ApiClient, ApiError } from "./api.js";
import * as render from "./render.js";
import * as st from "./state.js";

const api = new ApiClient("");
let state = st.initialState();

function byId<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function setError(target: HTMLElement, message: string | null): void {
  target.innerHTML = "";
  if (message) target.append(render.inlineError(message));
}

function syncUrl(): void {
  history.replaceState(null, "", `?${st.toQuery(state)}`);
}

async function refreshHistory(): Promise<void> {
  if (!state.clipId) return;
  const records = await api.history(state.clipId);
  state = st.applyHistory(state, records);
  renderHistory();
}

function renderHistory(): void {
  const panel = byId<HTMLDivElement>("history-panel");
  panel.innerHTML = "";
  panel.append(
    render.historyList(state.history, state.compareSelection, (index) => {
      state = st.toggleCompare(state, index);
      renderHistory();
      renderCompare();
    }),
  );
  byId<HTMLButtonElement>("compare-hint").style.display = st.compareEnabled(state) ? "none" : "block";
}

function renderCompare(): void {
  const panel = byId<HTMLDivElement>("compare-panel");
  panel.innerHTML = "";
  if (!st.compareReady(state) || !state.spectrogramUrl) return;
  const [i, j] = state.compareSelection;
  panel.append(render.compareView(state.history[i], state.history[j], state.spectrogramUrl, state.overlayOpacity));
}

async function pumpQueue(): Promise<void> {
  const errors = byId<HTMLDivElement>("prompt-error");
  for (;;) {
    const [request, next] = st.takePending(state);
    state = next;
    byId<HTMLDivElement>("pending-indicator").style.display = state.pending.length ? "block" : "none";
    if (!request || !state.clipId) return;
    try {
      const result = await api.explain(state.clipId, request.prompt, request.domain);
      const cards = byId<HTMLDivElement>("cards");
      cards.prepend(render.resultCard(result, state.spectrogramUrl ?? "", state.overlayOpacity));
      await refreshHistory();
    } catch (err) {
      setError(errors, err instanceof ApiError ? `${err.status}: ${err.message}` : String(err));
    }
  }
}

function submitPrompt(): void {
  const input = byId<HTMLInputElement>("prompt-input");
  const errors = byId<HTMLDivElement>("prompt-error");
  const problem = st.validatePrompt(state, input.value);
  if (problem) {
    setError(errors, problem);
    return; // no request leaves the client on validation failure
  }
  setError(errors, null);
  const wasIdle = !state.inFlight;
  state = st.enqueuePrompt(state, input.value);
  if (wasIdle) void pumpQueue();
}

async function uploadFile(file: File): Promise<void> {
  const errors = byId<HTMLDivElement>("upload-error");
  try {
    const result = await api.uploadClip(await file.arrayBuffer());
    state = st.selectClip(state, result.clip_id, result.spectrogram_url);
    const spec = byId<HTMLImageElement>("spectrogram");
    spec.src = result.spectrogram_url;
    spec.style.display = "block";
    byId<HTMLDivElement>("clip-meta").textContent =
      `clip ${result.clip_id} (${result.duration.toFixed(2)} s)`;
    setError(errors, null);
    syncUrl();
    await refreshHistory();
    renderCompare();
  } catch (err) {
    setError(errors, err instanceof ApiError ? `${err.status}: ${err.message}` : String(err));
  }
}

async function runClassify(): Promise<void> {
  const errors = byId<HTMLDivElement>("classify-error");
  const labels = byId<HTMLTextAreaElement>("labels-input")
    .value.split("\n")
    .map((s) => s.trim())
    .filter((s) => s.length > 0);
  if (!state.clipId) {
    setError(errors, "select or upload a clip first");
    return;
  }
  if (labels.length < 2) {
    setError(errors, "enter at least 2 labels");
    return;
  }
  try {
    const result = await api.classify(state.clipId, labels);
    setError(errors, null);
    const panel = byId<HTMLDivElement>("classify-panel");
    panel.innerHTML = "";
    panel.append(
      render.classifyTable(result, (prompt) => {
        byId<HTMLInputElement>("prompt-input").value = prompt;
      }),
    );
  } catch (err) {
    setError(errors, err instanceof ApiError ? `${err.status}: ${err.message}` : String(err));
  }
}

function init(): void {
  const fromUrl = st.fromQuery(location.search);
  state = { ...state, ...fromUrl, clipId: null }; // clips live server-side per session

  byId<HTMLInputElement>("file-input").addEventListener("change", (event) => {
    const file = (event.target as HTMLInputElement).files?.[0];
    if (file) void uploadFile(file);
  });
  byId<HTMLButtonElement>("explain-btn").addEventListener("click", submitPrompt);
  byId<HTMLInputElement>("prompt-input").addEventListener("keydown", (event) => {
    if (event.key === "Enter") submitPrompt();
  });
  const domainToggle = byId<HTMLSelectElement>("domain-select");
  domainToggle.value = state.domain;
  domainToggle.addEventListener("change", () => {
    state = { ...state, domain: domainToggle.value as st.Domain };
    byId<HTMLDivElement>("audio-note").style.display = st.audioEnabled(state) ? "none" : "block";
    syncUrl();
  });
  const opacity = byId<HTMLInputElement>("opacity-slider");
  opacity.value = String(Math.round(state.overlayOpacity * 100));
  opacity.addEventListener("input", () => {
    state = { ...state, overlayOpacity: Number(opacity.value) / 100 };
    document.querySelectorAll<HTMLImageElement>(".overlay-mask").forEach((img) => {
      img.style.opacity = String(state.overlayOpacity);
    });
    syncUrl();
  });
  byId<HTMLButtonElement>("classify-btn").addEventListener("click", () => void runClassify());
  void api.labels().then((res) => {
    byId<HTMLTextAreaElement>("labels-input").value = res.labels.join("\n");
  }).catch(() => undefined);
}

document.addEventListener("DOMContentLoaded", init);
