// Generation-job polling and audio element hookup.

import { ApiClient, JobStatus } from "./api.js";

export interface PollOptions {
  intervalMs?: number;
  maxWaitMs?: number;
  sleep?: (ms: number) => Promise<void>;
  signal?: AbortSignal;
}

const defaultSleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

/** Poll until the job settles (done or failed). Resolves with the final
 *  status; rejects on timeout or abort. */
export async function pollJob(
  api: ApiClient,
  jobId: string,
  opts: PollOptions = {},
): Promise<JobStatus> {
  const interval = opts.intervalMs ?? 500;
  const maxWait = opts.maxWaitMs ?? 300_000;
  const sleep = opts.sleep ?? defaultSleep;
  const started = Date.now();
  for (;;) {
    if (opts.signal?.aborted) throw new Error("polling aborted");
    const status = await api.jobStatus(jobId);
    if (status.status === "done" || status.status === "failed") return status;
    if (Date.now() - started > maxWait) throw new Error(`job ${jobId} timed out`);
    await sleep(interval);
  }
}

/** Point an <audio> element at a finished job and mark it playable. */
export function attachAudio(element: HTMLAudioElement, api: ApiClient, jobId: string): void {
  element.src = api.audioUrl(jobId);
  element.controls = true;
  element.dataset.jobId = jobId;
}
