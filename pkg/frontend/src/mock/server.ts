// In-process stand-in for the generation service: a fetch-compatible
// function over fixture data. UI tests run entirely against this, with no
// trained models behind it.

import { FetchLike } from "../api.js";

export interface MockFixtures {
  frameCount: number;
  duration: number;
  maskPngBase64: string;
  areaRatios: number[];
  /** number of status polls a job spends queued/running before done */
  jobDelayPolls?: number;
  failGeneration?: boolean;
  audioBytes?: Uint8Array;
}

interface MockJob {
  id: string;
  sessionId: string;
  polls: number;
  params: Record<string, unknown>;
}

export interface MockServer {
  fetch: FetchLike;
  state: {
    uploads: number;
    clicks: { frame_index: number; x: number; y: number; polarity: string }[];
    propagations: number;
    jobs: MockJob[];
  };
}

function json(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

function error(status: number, detail: string): Response {
  return json({ detail }, status);
}

export function createMockServer(fx: MockFixtures): MockServer {
  const state: MockServer["state"] = { uploads: 0, clicks: [], propagations: 0, jobs: [] };
  let hasMask = false;
  let hasTrack = false;
  let anchor: number | null = null;

  const fetchImpl: FetchLike = async (url, init) => {
    const method = (init?.method ?? "GET").toUpperCase();
    const path = url.replace(/^https?:\/\/[^/]+/, "");
    const body = typeof init?.body === "string" ? JSON.parse(init.body) : null;

    if (method === "POST" && path === "/videos") {
      state.uploads += 1;
      return json({
        video_id: `v${state.uploads}`,
        frame_count: fx.frameCount,
        duration: fx.duration,
      });
    }
    const infoMatch = path.match(/^\/videos\/([^/]+)$/);
    if (method === "GET" && infoMatch) {
      return json({
        video_id: infoMatch[1],
        frame_count: fx.frameCount,
        duration: fx.duration,
      });
    }
    if (method === "GET" && /^\/videos\/[^/]+\/frames\/\d+$/.test(path)) {
      const frame = Number(path.split("/").pop());
      if (frame >= fx.frameCount) return error(404, "frame out of range");
      return new Response(new Uint8Array([0x89, 0x50, 0x4e, 0x47]), {
        status: 200,
        headers: { "content-type": "image/png" },
      });
    }
    if (method === "POST" && path === "/sessions") {
      return json(sessionBody());
    }
    if (method === "GET" && /^\/sessions\/[^/]+$/.test(path)) {
      return json(sessionBody());
    }
    if (method === "POST" && /^\/sessions\/[^/]+\/clicks$/.test(path)) {
      if (body.x < 0 || body.y < 0) return error(422, "click outside the frame");
      state.clicks.push(body);
      hasMask = true;
      hasTrack = false;
      anchor = body.frame_index;
      return json({
        mask_png: fx.maskPngBase64,
        area_ratio: fx.areaRatios[0] ?? 0.1,
        click_count: state.clicks.length,
      });
    }
    if (method === "POST" && /^\/sessions\/[^/]+\/propagate$/.test(path)) {
      if (!hasMask) return error(409, "no mask yet: click the object first");
      state.propagations += 1;
      hasTrack = true;
      return json({ area_ratios: fx.areaRatios });
    }
    if (method === "POST" && /^\/sessions\/[^/]+\/generate$/.test(path)) {
      if (!hasTrack) return error(409, "no mask track yet: propagate first");
      const job: MockJob = {
        id: `j${state.jobs.length + 1}`,
        sessionId: path.split("/")[2],
        polls: 0,
        params: body,
      };
      state.jobs.push(job);
      return json({ job_id: job.id });
    }
    const jobMatch = path.match(/^\/jobs\/([^/]+)$/);
    if (method === "GET" && jobMatch) {
      const job = state.jobs.find((j) => j.id === jobMatch[1]);
      if (!job) return error(404, "unknown job");
      job.polls += 1;
      const delay = fx.jobDelayPolls ?? 2;
      let status: string;
      if (job.polls <= delay) {
        status = job.polls === 1 ? "queued" : "running";
      } else {
        status = fx.failGeneration ? "failed" : "done";
      }
      return json({
        id: job.id,
        session_id: job.sessionId,
        status,
        params: job.params,
        error: status === "failed" ? "sampler aborted: non-finite latent at step 7" : null,
      });
    }
    if (method === "GET" && /^\/audio\/[^/]+\.wav$/.test(path)) {
      const bytes = fx.audioBytes ?? new Uint8Array([0x52, 0x49, 0x46, 0x46]);
      const buf = new ArrayBuffer(bytes.length);
      new Uint8Array(buf).set(bytes);
      return new Response(buf, { status: 200, headers: { "content-type": "audio/wav" } });
    }
    return error(404, `no mock route for ${method} ${path}`);
  };

  function sessionBody() {
    return {
      id: "s1",
      video_id: "v1",
      anchor_frame: anchor,
      clicks: state.clicks,
      has_mask: hasMask,
      has_track: hasTrack,
      jobs: state.jobs.map((j) => j.id),
      ...(hasMask ? { mask_png: fx.maskPngBase64 } : {}),
    };
  }

  return { fetch: fetchImpl, state };
}
