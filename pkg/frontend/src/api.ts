// Typed client for the generation service. One method per endpoint; the
// fetch implementation is injectable so tests can run against a mock.

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface UploadResponse {
  video_id: string;
  frame_count: number;
  duration: number;
}

export interface VideoInfo extends UploadResponse {}

export interface ClickInfo {
  frame_index: number;
  x: number;
  y: number;
  polarity: "positive" | "negative";
}

export interface SessionInfo {
  id: string;
  video_id: string;
  anchor_frame: number | null;
  clicks: ClickInfo[];
  has_mask: boolean;
  has_track: boolean;
  jobs: string[];
  mask_png?: string;
}

export interface ClickResponse {
  mask_png: string;
  area_ratio: number;
  click_count: number;
}

export interface PropagateResponse {
  area_ratios: number[];
}

export interface GenerateParams {
  steps: number;
  cfg_scale: number;
  seed: number;
  mode?: "ancestral" | "deterministic";
}

export type JobState = "queued" | "running" | "done" | "failed";

export interface JobStatus {
  id: string;
  session_id: string;
  status: JobState;
  params: GenerateParams;
  error: string | null;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

async function parseJson<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = response.statusText || `HTTP ${response.status}`;
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

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  async uploadVideo(file: Blob, filename = "upload.avi"): Promise<UploadResponse> {
    const form = new FormData();
    form.append("file", file, filename);
    const r = await this.fetchImpl(this.url("/videos"), { method: "POST", body: form });
    return parseJson<UploadResponse>(r);
  }

  async videoInfo(videoId: string): Promise<VideoInfo> {
    const r = await this.fetchImpl(this.url(`/videos/${videoId}`));
    return parseJson<VideoInfo>(r);
  }

  frameUrl(videoId: string, frame: number): string {
    return this.url(`/videos/${videoId}/frames/${frame}`);
  }

  async createSession(videoId: string): Promise<SessionInfo> {
    const r = await this.fetchImpl(this.url("/sessions"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ video_id: videoId }),
    });
    return parseJson<SessionInfo>(r);
  }

  async getSession(sessionId: string): Promise<SessionInfo> {
    const r = await this.fetchImpl(this.url(`/sessions/${sessionId}`));
    return parseJson<SessionInfo>(r);
  }

  async addClick(sessionId: string, click: ClickInfo): Promise<ClickResponse> {
    const r = await this.fetchImpl(this.url(`/sessions/${sessionId}/clicks`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(click),
    });
    return parseJson<ClickResponse>(r);
  }

  async propagate(sessionId: string): Promise<PropagateResponse> {
    const r = await this.fetchImpl(this.url(`/sessions/${sessionId}/propagate`), {
      method: "POST",
    });
    return parseJson<PropagateResponse>(r);
  }

  async generate(sessionId: string, params: GenerateParams): Promise<{ job_id: string }> {
    const r = await this.fetchImpl(this.url(`/sessions/${sessionId}/generate`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(params),
    });
    return parseJson<{ job_id: string }>(r);
  }

  async jobStatus(jobId: string): Promise<JobStatus> {
    const r = await this.fetchImpl(this.url(`/jobs/${jobId}`));
    return parseJson<JobStatus>(r);
  }

  audioUrl(jobId: string): string {
    return this.url(`/audio/${jobId}.wav`);
  }
}
