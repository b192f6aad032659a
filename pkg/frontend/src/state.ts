// Client-side session state and the user flows over it. The controller
// mirrors server state and never mutates it except through API calls, so a
// page reload can rebuild everything from GETs.

import { ApiClient, ApiError, ClickInfo, GenerateParams, JobStatus } from "./api.js";
import { decodeBase64, PngDecoder, RgbaImage } from "./overlay.js";
import { pollJob, PollOptions } from "./player.js";

export interface JobRecord {
  id: string;
  status: JobStatus["status"];
  params: GenerateParams | null;
  audioUrl: string | null;
  error: string | null;
}

export interface UiState {
  videoId: string | null;
  sessionId: string | null;
  frameCount: number;
  duration: number;
  frameIndex: number;
  anchorFrame: number | null;
  clicks: ClickInfo[];
  maskImage: RgbaImage | null;
  areaRatios: number[] | null;
  jobs: JobRecord[];
  error: string | null;
  busy: boolean;
}

export const DEFAULT_PARAMS: GenerateParams = { steps: 50, cfg_scale: 4.5, seed: 0 };

type Listener = (state: UiState) => void;

export class SessionController {
  state: UiState = emptyState();

  constructor(
    private readonly api: ApiClient,
    private readonly decodePng: PngDecoder,
    private readonly listener: Listener = () => {},
  ) {}

  private emit(): void {
    this.listener(this.state);
  }

  private fail(err: unknown): void {
    this.state.error = err instanceof Error ? err.message : String(err);
    this.state.busy = false;
    this.emit();
  }

  /** Upload a video and open a fresh session; any previous session state
   *  is discarded. */
  async uploadFlow(file: Blob, filename?: string): Promise<void> {
    this.state = { ...emptyState(), busy: true };
    this.emit();
    try {
      const up = await this.api.uploadVideo(file, filename);
      const session = await this.api.createSession(up.video_id);
      this.state = {
        ...emptyState(),
        videoId: up.video_id,
        sessionId: session.id,
        frameCount: up.frame_count,
        duration: up.duration,
      };
      this.emit();
    } catch (err) {
      this.fail(err);
    }
  }

  selectFrame(k: number): void {
    if (k < 0 || k >= this.state.frameCount) return;
    this.state.frameIndex = k;
    this.emit();
  }

  frameUrl(k?: number): string | null {
    if (!this.state.videoId) return null;
    return this.api.frameUrl(this.state.videoId, k ?? this.state.frameIndex);
  }

  /** Add a click on the current frame (the anchor, once set) and refresh
   *  the mask overlay from the response. */
  async clickToMask(x: number, y: number, polarity: ClickInfo["polarity"]): Promise<void> {
    if (!this.state.sessionId) return;
    const frame = this.state.anchorFrame ?? this.state.frameIndex;
    const click: ClickInfo = { frame_index: frame, x, y, polarity };
    try {
      const r = await this.api.addClick(this.state.sessionId, click);
      this.state.clicks = [...this.state.clicks, click];
      this.state.anchorFrame = frame;
      this.state.maskImage = await this.decodePng(decodeBase64(r.mask_png));
      this.state.areaRatios = null; // a new mask invalidates the preview
      this.state.error = null;
      this.emit();
    } catch (err) {
      this.fail(err);
    }
  }

  get canPropagate(): boolean {
    return this.state.maskImage !== null && !this.state.busy;
  }

  /** Propagate the anchor mask through the clip; keeps the per-frame area
   *  ratios for the loudness preview sparkline. */
  async propagateAndPreview(): Promise<number[] | null> {
    if (!this.state.sessionId || !this.canPropagate) return null;
    this.state.busy = true;
    this.emit();
    try {
      const r = await this.api.propagate(this.state.sessionId);
      this.state.areaRatios = r.area_ratios;
      this.state.busy = false;
      this.state.error = null;
      this.emit();
      return r.area_ratios;
    } catch (err) {
      this.fail(err);
      return null;
    }
  }

  /** Queue a generation job, poll it to completion and expose the audio
   *  URL once playable. */
  async generateAndPlay(
    params: GenerateParams = DEFAULT_PARAMS,
    poll: PollOptions = {},
  ): Promise<JobRecord | null> {
    if (!this.state.sessionId) return null;
    try {
      const { job_id } = await this.api.generate(this.state.sessionId, params);
      const record: JobRecord = {
        id: job_id, status: "queued", params, audioUrl: null, error: null,
      };
      this.state.jobs = [...this.state.jobs, record];
      this.emit();
      const final = await pollJob(this.api, job_id, poll);
      record.status = final.status;
      record.error = final.error;
      if (final.status === "done") {
        record.audioUrl = this.api.audioUrl(job_id);
      } else {
        this.state.error = final.error ?? "generation failed";
      }
      this.state.jobs = [...this.state.jobs];
      this.emit();
      return record;
    } catch (err) {
      this.fail(err);
      return null;
    }
  }

  /** Rebuild state after a reload from the server's records alone. */
  async restore(videoId: string, sessionId: string): Promise<void> {
    try {
      const info = await this.api.videoInfo(videoId);
      const session = await this.api.getSession(sessionId);
      const jobs: JobRecord[] = [];
      for (const jobId of session.jobs) {
        const status = await this.api.jobStatus(jobId);
        jobs.push({
          id: jobId,
          status: status.status,
          params: status.params,
          audioUrl: status.status === "done" ? this.api.audioUrl(jobId) : null,
          error: status.error,
        });
      }
      this.state = {
        ...emptyState(),
        videoId,
        sessionId,
        frameCount: info.frame_count,
        duration: info.duration,
        frameIndex: session.anchor_frame ?? 0,
        anchorFrame: session.anchor_frame,
        clicks: session.clicks,
        maskImage: session.mask_png
          ? await this.decodePng(decodeBase64(session.mask_png))
          : null,
        jobs,
      };
      this.emit();
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) {
        this.state = emptyState();
        this.emit();
        return;
      }
      this.fail(err);
    }
  }
}

export function emptyState(): UiState {
  return {
    videoId: null,
    sessionId: null,
    frameCount: 0,
    duration: 0,
    frameIndex: 0,
    anchorFrame: null,
    clicks: [],
    maskImage: null,
    areaRatios: null,
    jobs: [],
    error: null,
    busy: false,
  };
}
