// Typed client for the explorer API. Every number shown in the UI comes from
// these responses; nothing is recomputed client-side.

export interface UploadResult {
  clip_id: string;
  duration: number;
  spectrogram_url: string;
}

export interface ExplainResult {
  mask_url: string;
  audio_url: string | null;
  similarity_original: number;
  similarity_masked: number;
  mask_mean: number;
  prompt: string;
  domain: string;
}

export interface ClassifyResult {
  labels: string[];
  prompts: string[];
  scores: number[];
  probabilities: number[];
  predicted_index: number;
  predicted_label: string;
}

export interface HistoryRecord {
  clip_id: string;
  prompt: string;
  domain: string;
  similarity: number;
  similarity_masked: number;
  mask_mean: number;
  mask_url: string;
  audio_url: string | null;
  timestamp: string;
}

export interface LabelsResult {
  labels: string[];
  prompt_prefix: string;
}

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private base: string = "",
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.base + "/api/v1" + path, init);
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = await response.json();
        if (body && typeof body.detail === "string") detail = body.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  uploadClip(data: ArrayBuffer | Blob): Promise<UploadResult> {
    return this.request<UploadResult>("/clips", {
      method: "POST",
      headers: { "content-type": "audio/wav" },
      body: data,
    });
  }

  explain(clipId: string, prompt: string, domain: string): Promise<ExplainResult> {
    return this.request<ExplainResult>("/explain", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ clip_id: clipId, prompt, domain }),
    });
  }

  classify(clipId: string, labels: string[]): Promise<ClassifyResult> {
    return this.request<ClassifyResult>("/classify", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ clip_id: clipId, labels }),
    });
  }

  history(clipId: string): Promise<HistoryRecord[]> {
    return this.request<HistoryRecord[]>(`/clips/${clipId}/history`);
  }

  labels(): Promise<LabelsResult> {
    return this.request<LabelsResult>("/labels");
  }
}
