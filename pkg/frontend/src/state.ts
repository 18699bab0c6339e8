// Pure state container for the explorer: prompt queueing, history mirroring,
// compare selection and URL serialization. No network or DOM access here.

import type { HistoryRecord } from "./api.js";

export type Domain = "mel" | "stft";

export interface PendingPrompt {
  prompt: string;
  domain: Domain;
}

export interface ExplorerState {
  clipId: string | null;
  spectrogramUrl: string | null;
  promptInput: string;
  domain: Domain;
  overlayOpacity: number; // 0..1
  history: HistoryRecord[];
  inFlight: boolean;
  pending: PendingPrompt[];
  compareSelection: number[]; // indexes into history, at most 2
}

export function initialState(): ExplorerState {
  return {
    clipId: null,
    spectrogramUrl: null,
    promptInput: "",
    domain: "mel",
    overlayOpacity: 0.6,
    history: [],
    inFlight: false,
    pending: [],
    compareSelection: [],
  };
}

/** Audio playback only exists for listenable (stft) explanations. */
export function audioEnabled(state: ExplorerState): boolean {
  return state.domain === "stft";
}

/** Returns a validation message, or null when a prompt may be submitted. */
export function validatePrompt(state: ExplorerState, prompt: string): string | null {
  if (state.clipId === null) return "select or upload a clip first";
  if (prompt.trim().length === 0) return "prompt must not be empty";
  return null;
}

/** One in-flight request per clip; later submissions queue in order. */
export function enqueuePrompt(state: ExplorerState, prompt: string): ExplorerState {
  const request: PendingPrompt = { prompt: prompt.trim(), domain: state.domain };
  if (state.inFlight) {
    return { ...state, pending: [...state.pending, request] };
  }
  return { ...state, inFlight: true, pending: [...state.pending, request] };
}

/** Pop the next queued prompt (call when starting / finishing a request). */
export function takePending(state: ExplorerState): [PendingPrompt | null, ExplorerState] {
  if (state.pending.length === 0) {
    return [null, { ...state, inFlight: false }];
  }
  const [head, ...rest] = state.pending;
  return [head, { ...state, pending: rest, inFlight: true }];
}

/** The server's history is the single source of truth; mirror it verbatim. */
export function applyHistory(state: ExplorerState, records: HistoryRecord[]): ExplorerState {
  const selection = state.compareSelection.filter((i) => i < records.length);
  return { ...state, history: [...records], compareSelection: selection };
}

export function selectClip(state: ExplorerState, clipId: string, spectrogramUrl: string): ExplorerState {
  return {
    ...state,
    clipId,
    spectrogramUrl,
    history: [],
    pending: [],
    inFlight: false,
    compareSelection: [],
  };
}

/** Toggle a history entry in the 2-slot compare selection. */
export function toggleCompare(state: ExplorerState, index: number): ExplorerState {
  if (index < 0 || index >= state.history.length) return state;
  let selection = state.compareSelection.includes(index)
    ? state.compareSelection.filter((i) => i !== index)
    : [...state.compareSelection, index];
  if (selection.length > 2) selection = selection.slice(-2);
  return { ...state, compareSelection: selection };
}

export function compareEnabled(state: ExplorerState): boolean {
  return state.history.length >= 2;
}

export function compareReady(state: ExplorerState): boolean {
  return state.compareSelection.length === 2;
}

// Shareable views: the lightweight parts of the state round-trip through the
// URL query string.
export function toQuery(state: ExplorerState): string {
  const params = new URLSearchParams();
  if (state.clipId) params.set("clip", state.clipId);
  params.set("domain", state.domain);
  params.set("opacity", state.overlayOpacity.toFixed(2));
  return params.toString();
}

export function fromQuery(query: string): Partial<ExplorerState> {
  const params = new URLSearchParams(query);
  const out: Partial<ExplorerState> = {};
  const clip = params.get("clip");
  if (clip) out.clipId = clip;
  const domain = params.get("domain");
  if (domain === "mel" || domain === "stft") out.domain = domain;
  const opacity = Number(params.get("opacity"));
  if (Number.isFinite(opacity) && opacity >= 0 && opacity <= 1) out.overlayOpacity = opacity;
  return out;
}
