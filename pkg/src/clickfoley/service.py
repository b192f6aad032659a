"""HTTP interface for the interactive loop.

Upload a video, open a session, click an object on one anchor frame
(positive/negative clicks refine the mask), propagate the mask through
the clip, then queue a generation job and fetch the audio when it is
done. One worker thread executes generation jobs serially over read-only
model weights; request handlers only touch the session/job stores under a
lock. Job state only ever moves queued -> running -> done|failed.
"""
from __future__ import annotations

import base64
import io
import queue
import tempfile
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, UploadFile
from fastapi.responses import FileResponse, JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from PIL import Image
from pydantic import BaseModel

from . import augment, media, pipeline, segmentation
from .config import Config
from .diffusion import SamplerConfig
from .errors import ClickFoleyError, DecodeError, EmptyMediaError, InvalidPromptError

MASK_RGBA = (66, 133, 244, 160)  # overlay color for returned mask PNGs


@dataclass
class Session:
    id: str
    video_id: str
    clicks: list[segmentation.Click] = field(default_factory=list)
    anchor_frame: int | None = None
    frame_mask: np.ndarray | None = None
    track: segmentation.MaskTrack | None = None


@dataclass
class Job:
    id: str
    session_id: str
    params: dict
    status: str = "queued"
    audio_path: str | None = None
    error: str | None = None


class ClickBody(BaseModel):
    frame_index: int
    x: int
    y: int
    polarity: str = "positive"


class SessionBody(BaseModel):
    video_id: str


class GenerateBody(BaseModel):
    steps: int = 50
    cfg_scale: float = 4.5
    seed: int = 0
    mode: str = "ancestral"


def mask_to_png_bytes(mask: np.ndarray) -> bytes:
    h, w = mask.shape
    rgba = np.zeros((h, w, 4), dtype=np.uint8)
    rgba[mask > 0] = MASK_RGBA
    buf = io.BytesIO()
    Image.fromarray(rgba, "RGBA").save(buf, format="PNG")
    return buf.getvalue()


class AppState:
    def __init__(self, ckpt_dir: str | None, work_dir: str | None, config: Config):
        self.config = config
        self.ckpt_dir = ckpt_dir
        self.work_dir = Path(work_dir or tempfile.mkdtemp(prefix="clickfoley-"))
        self.work_dir.mkdir(parents=True, exist_ok=True)
        self.videos: dict[str, media.VideoClip] = {}
        self.sessions: dict[str, Session] = {}
        self.jobs: dict[str, Job] = {}
        self.lock = threading.Lock()
        self.queue: queue.Queue[str] = queue.Queue(maxsize=config["service.queue_depth"])
        self._assets = None
        self._assets_lock = threading.Lock()
        self.seg_cfg = segmentation.SegmenterConfig(
            iou_threshold=config["seg.iou_threshold"],
            nms_threshold=config["seg.nms_threshold"],
            voting_frames=config["seg.voting_frames"],
            color_tolerance=config["seg.color_tolerance"],
            accept_iou=config["seg.accept_iou"],
        )
        self.worker = threading.Thread(target=self._run_jobs, daemon=True)
        self.worker.start()

    def assets(self) -> pipeline.GenerationAssets:
        with self._assets_lock:
            if self._assets is None:
                if not self.ckpt_dir:
                    raise ClickFoleyError("no checkpoint directory configured")
                self._assets = pipeline.load_assets(self.ckpt_dir)
            return self._assets

    def _run_jobs(self):
        while True:
            job_id = self.queue.get()
            with self.lock:
                job = self.jobs[job_id]
                job.status = "running"
                session = self.sessions[job.session_id]
                video = self.videos[session.video_id]
                track = session.track
            try:
                sampler = SamplerConfig(
                    steps=job.params["steps"],
                    cfg_scale=job.params["cfg_scale"],
                    mode=job.params.get("mode", "ancestral"),
                    seed=job.params["seed"],
                )
                wave, _ = pipeline.generate_audio(video, track, self.assets(), sampler)
                out = self.work_dir / f"{job.id}.wav"
                media.write_wav(wave, out)
                with self.lock:
                    job.audio_path = str(out)
                    job.status = "done"
            except Exception as exc:  # job isolation: any failure lands in the record
                with self.lock:
                    job.error = f"{type(exc).__name__}: {exc}"
                    job.status = "failed"
            finally:
                self.queue.task_done()


def create_app(
    ckpt_dir: str | None = None,
    work_dir: str | None = None,
    config: Config | None = None,
    static_dir: str | None = None,
) -> FastAPI:
    config = config or Config()
    app = FastAPI(title="clickfoley", version="0.1.0")
    state = AppState(ckpt_dir, work_dir, config)
    app.state.store = state
    max_bytes = config["service.max_upload_mb"] * 1024 * 1024

    @app.post("/videos")
    async def upload_video(file: UploadFile):
        data = await file.read()
        if len(data) == 0:
            raise HTTPException(400, "empty upload")
        if len(data) > max_bytes:
            raise HTTPException(413, f"upload exceeds {max_bytes} bytes")
        video_id = uuid.uuid4().hex[:12]
        suffix = Path(file.filename or "upload.bin").suffix or ".bin"
        raw_path = state.work_dir / f"upload_{video_id}{suffix}"
        raw_path.write_bytes(data)
        try:
            clip = media.load_video(
                raw_path, target_fps=config["media.fps"], side=config["media.side"]
            )
        except (DecodeError, EmptyMediaError) as exc:
            raise HTTPException(400, f"cannot decode video: {exc}")
        with state.lock:
            state.videos[video_id] = clip
        return {"video_id": video_id, "frame_count": clip.t, "duration": clip.duration}

    @app.get("/videos/{video_id}")
    def video_info(video_id: str):
        with state.lock:
            clip = state.videos.get(video_id)
        if clip is None:
            raise HTTPException(404, "unknown video")
        return {"video_id": video_id, "frame_count": clip.t, "duration": clip.duration}

    @app.get("/videos/{video_id}/frames/{k}")
    def get_frame(video_id: str, k: int):
        with state.lock:
            clip = state.videos.get(video_id)
        if clip is None:
            raise HTTPException(404, "unknown video")
        if not 0 <= k < clip.t:
            raise HTTPException(404, f"frame {k} outside [0, {clip.t})")
        buf = io.BytesIO()
        Image.fromarray(clip.frames[k]).save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    @app.post("/sessions")
    def create_session(body: SessionBody):
        with state.lock:
            if body.video_id not in state.videos:
                raise HTTPException(404, "unknown video")
            session = Session(id=uuid.uuid4().hex[:12], video_id=body.video_id)
            state.sessions[session.id] = session
        return _session_json(session)

    @app.post("/sessions/{session_id}/clicks")
    def add_click(session_id: str, body: ClickBody):
        with state.lock:
            session = state.sessions.get(session_id)
            if session is None:
                raise HTTPException(404, "unknown session")
            clip = state.videos[session.video_id]
            if not 0 <= body.frame_index < clip.t:
                raise HTTPException(422, "frame index outside the clip")
            if not (0 <= body.x < clip.width and 0 <= body.y < clip.height):
                raise HTTPException(422, "click outside the frame")
            if session.anchor_frame is not None and body.frame_index != session.anchor_frame:
                raise HTTPException(422, "clicks must stay on the session's anchor frame")
            try:
                click = segmentation.Click(body.frame_index, body.x, body.y, body.polarity)
                candidate = session.clicks + [click]
                mask = segmentation.segment_from_clicks(
                    clip.frames[body.frame_index], candidate, state.seg_cfg
                )
            except InvalidPromptError as exc:
                raise HTTPException(422, str(exc))
            session.clicks.append(click)
            session.anchor_frame = body.frame_index
            session.frame_mask = mask
            session.track = None  # a new mask invalidates any previous propagation
        return {
            "mask_png": base64.b64encode(mask_to_png_bytes(mask)).decode(),
            "area_ratio": float(mask.mean()),
            "click_count": len(session.clicks),
        }

    @app.post("/sessions/{session_id}/propagate")
    def propagate(session_id: str):
        with state.lock:
            session = state.sessions.get(session_id)
            if session is None:
                raise HTTPException(404, "unknown session")
            if session.frame_mask is None:
                raise HTTPException(409, "no mask yet: click the object first")
            clip = state.videos[session.video_id]
            anchor_frame = session.anchor_frame
            mask = session.frame_mask
        track = segmentation.propagate_mask(clip, anchor_frame, mask, state.seg_cfg)
        ratios = augment.area_ratios(track)
        with state.lock:
            if session.frame_mask is mask:  # drop the result if clicks changed meanwhile
                session.track = track
        return {"area_ratios": [float(r) for r in ratios]}

    @app.post("/sessions/{session_id}/generate")
    def generate(session_id: str, body: GenerateBody):
        with state.lock:
            session = state.sessions.get(session_id)
            if session is None:
                raise HTTPException(404, "unknown session")
            if session.track is None:
                raise HTTPException(409, "no mask track yet: propagate first")
            job = Job(
                id=uuid.uuid4().hex[:12],
                session_id=session_id,
                params={
                    "steps": body.steps,
                    "cfg_scale": body.cfg_scale,
                    "seed": body.seed,
                    "mode": body.mode,
                },
            )
            state.jobs[job.id] = job
        try:
            state.queue.put_nowait(job.id)
        except queue.Full:
            with state.lock:
                job.status = "failed"
                job.error = "job queue is full"
            raise HTTPException(503, "job queue is full")
        return {"job_id": job.id}

    @app.get("/jobs/{job_id}")
    def job_status(job_id: str):
        with state.lock:
            job = state.jobs.get(job_id)
            if job is None:
                raise HTTPException(404, "unknown job")
            return {
                "id": job.id,
                "session_id": job.session_id,
                "status": job.status,
                "params": job.params,
                "error": job.error,
            }

    @app.get("/audio/{job_id}.wav")
    def job_audio(job_id: str):
        with state.lock:
            job = state.jobs.get(job_id)
        if job is None:
            raise HTTPException(404, "unknown job")
        if job.status != "done" or not job.audio_path:
            raise HTTPException(409, f"job is {job.status}")
        return FileResponse(job.audio_path, media_type="audio/wav")

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        with state.lock:
            session = state.sessions.get(session_id)
            if session is None:
                raise HTTPException(404, "unknown session")
            jobs = [j.id for j in state.jobs.values() if j.session_id == session_id]
            return _session_json(session, jobs)

    @app.get("/spec")
    def openapi_spec():
        return JSONResponse(app.openapi())

    if static_dir and Path(static_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=static_dir, html=True), name="ui")

    return app


def _session_json(session: Session, jobs: list[str] | None = None) -> dict:
    out = {
        "id": session.id,
        "video_id": session.video_id,
        "anchor_frame": session.anchor_frame,
        "clicks": [
            {"frame_index": c.frame_index, "x": c.x, "y": c.y, "polarity": c.polarity}
            for c in session.clicks
        ],
        "has_mask": session.frame_mask is not None,
        "has_track": session.track is not None,
        "jobs": jobs or [],
    }
    if session.frame_mask is not None:
        out["mask_png"] = base64.b64encode(mask_to_png_bytes(session.frame_mask)).decode()
    return out


def serve(host: str, port: int, ckpt_dir: str | None, config: Config | None = None,
          static_dir: str | None = None) -> None:
    import uvicorn

    app = create_app(ckpt_dir=ckpt_dir, config=config, static_dir=static_dir)
    uvicorn.run(app, host=host, port=port)
