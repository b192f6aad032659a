"""Object masks from clicks or text prompts, and their propagation in time.

The built-in segmenter is a deterministic stand-in for a promptable
segmentation model: seeded region growing in RGB space (the connected
component, around the seed, of pixels within ``color_tolerance`` of the
seed color). The built-in propagator re-segments each frame from seeds
sampled out of the previous frame's mask and keeps the candidate with the
best IoU against it. Real click/track models can be dropped in through
the two adapter interfaces without touching callers.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import cv2
import numpy as np
from PIL import Image

from .errors import AdapterUnavailableError, InvalidPromptError, ShapeMismatchError
from .media import VideoClip

POSITIVE = "positive"
NEGATIVE = "negative"


@dataclass(frozen=True)
class Click:
    frame_index: int
    x: int
    y: int
    polarity: str = POSITIVE

    def __post_init__(self):
        if self.polarity not in (POSITIVE, NEGATIVE):
            raise InvalidPromptError(f"polarity must be positive|negative, got {self.polarity}")


@dataclass
class SegmenterConfig:
    # iou/nms/voting mirror the knobs of external promptable segmenters and
    # trackers; only color_tolerance and accept_iou drive the built-in one.
    iou_threshold: float = 0.88
    nms_threshold: float = 0.8
    voting_frames: int = 15
    color_tolerance: float = 30.0
    accept_iou: float = 0.2

    def __post_init__(self):
        if not (0.0 <= self.iou_threshold <= 1.0 and 0.0 <= self.nms_threshold <= 1.0):
            raise ValueError("thresholds must lie in [0, 1]")


@dataclass
class MaskTrack:
    """Per-frame binary masks [T, H, W] for one object."""

    masks: np.ndarray
    source: str = "clicks"

    def __post_init__(self):
        self.masks = np.asarray(self.masks)
        if self.masks.ndim != 3:
            raise ShapeMismatchError(f"masks must be [T,H,W], got {self.masks.shape}")
        self.masks = (self.masks > 0).astype(np.uint8)

    @property
    def t(self) -> int:
        return self.masks.shape[0]

    @property
    def shape(self):
        return self.masks.shape


class ClickSegmenter(Protocol):
    """Adapter interface: one frame plus clicks to one mask. Implementations
    must document whether they are reentrant; the service serializes calls
    to exclusive ones."""

    def segment(self, frame: np.ndarray, clicks: Sequence[Click], cfg: SegmenterConfig) -> np.ndarray: ...


class TrackPropagator(Protocol):
    """Adapter interface: video plus an anchor mask to a full track."""

    def propagate(self, video: VideoClip, anchor_index: int, anchor: np.ndarray, cfg: SegmenterConfig) -> MaskTrack: ...


class TextSegmenter(Protocol):
    """Adapter interface: video plus a text prompt to a full track."""

    def segment_text(self, video: VideoClip, prompt: str) -> MaskTrack: ...


def _grow_region(frame: np.ndarray, x: int, y: int, tolerance: float) -> np.ndarray:
    """Connected component around (x, y) of pixels within ``tolerance``
    (Euclidean RGB distance) of the seed color. 4-connectivity."""
    rgb = frame.astype(np.float64)
    seed = rgb[y, x]
    near = (((rgb - seed) ** 2).sum(axis=2) <= tolerance * tolerance).astype(np.uint8)
    n, labels = cv2.connectedComponents(near, connectivity=4)
    return (labels == labels[y, x]).astype(np.uint8)


def _check_click_bounds(clicks: Sequence[Click], h: int, w: int) -> None:
    for c in clicks:
        if not (0 <= c.x < w and 0 <= c.y < h):
            raise InvalidPromptError(f"click ({c.x},{c.y}) outside {w}x{h} frame")


def segment_from_clicks(
    frame: np.ndarray, clicks: Sequence[Click], cfg: SegmenterConfig | None = None
) -> np.ndarray:
    """Binary mask [H, W] containing every positive click and no negative one."""
    cfg = cfg or SegmenterConfig()
    frame = np.asarray(frame, dtype=np.uint8)
    h, w = frame.shape[:2]
    positives = [c for c in clicks if c.polarity == POSITIVE]
    negatives = [c for c in clicks if c.polarity == NEGATIVE]
    if not positives:
        raise InvalidPromptError("at least one positive click is required")
    _check_click_bounds(clicks, h, w)
    pos_pixels = {(c.x, c.y) for c in positives}
    if pos_pixels & {(c.x, c.y) for c in negatives}:
        raise InvalidPromptError("a pixel cannot be clicked both positive and negative")
    mask = np.zeros((h, w), dtype=np.uint8)
    for c in positives:
        mask |= _grow_region(frame, c.x, c.y, cfg.color_tolerance)
    for c in negatives:
        mask &= 1 - _grow_region(frame, c.x, c.y, cfg.color_tolerance)
    for c in positives:  # negative growth may clip a positive seed; keep it covered
        mask[c.y, c.x] = 1
    return mask


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.logical_and(a, b).sum()
    union = np.logical_or(a, b).sum()
    return float(inter) / float(union) if union else 0.0


def _seed_points(mask: np.ndarray, n_extra: int = 5):
    """Centroid plus a deterministic spread of set pixels."""
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        return []
    seeds = [(int(round(xs.mean())), int(round(ys.mean())))]
    picks = (np.arange(1, n_extra + 1) * len(ys)) // (n_extra + 1)
    seeds.extend((int(xs[i]), int(ys[i])) for i in picks)
    return seeds


def _match_step(frame: np.ndarray, prev: np.ndarray, cfg: SegmenterConfig) -> np.ndarray:
    h, w = prev.shape
    best, best_iou = np.zeros_like(prev), 0.0
    for x, y in _seed_points(prev):
        if not (0 <= x < w and 0 <= y < h):
            continue
        cand = _grow_region(frame, x, y, cfg.color_tolerance)
        iou = mask_iou(cand, prev)
        if iou > best_iou:
            best, best_iou = cand, iou
    if best_iou < cfg.accept_iou:
        return np.zeros_like(prev)
    return best


def propagate_mask(
    video: VideoClip, anchor_index: int, anchor: np.ndarray, cfg: SegmenterConfig | None = None
) -> MaskTrack:
    """Extend a single-frame mask through the whole clip by per-frame matching.

    Frames after the anchor are matched forward, frames before it backward;
    the object leaving the frame degrades to empty masks, never an error.
    """
    cfg = cfg or SegmenterConfig()
    anchor = (np.asarray(anchor) > 0).astype(np.uint8)
    if anchor.sum() == 0:
        raise InvalidPromptError("anchor mask is empty")
    if anchor.shape != (video.height, video.width):
        raise ShapeMismatchError("anchor mask does not match the frame size")
    if not (0 <= anchor_index < video.t):
        raise IndexError(f"anchor index {anchor_index} outside [0, {video.t})")
    masks = np.zeros((video.t, video.height, video.width), dtype=np.uint8)
    masks[anchor_index] = anchor
    for t in range(anchor_index + 1, video.t):
        prev = masks[t - 1]
        masks[t] = _match_step(video.frames[t], prev, cfg) if prev.any() else 0
    for t in range(anchor_index - 1, -1, -1):
        prev = masks[t + 1]
        masks[t] = _match_step(video.frames[t], prev, cfg) if prev.any() else 0
    return MaskTrack(masks, source="clicks")


def segment_from_text(video: VideoClip, prompt: str, adapter: TextSegmenter | None) -> MaskTrack:
    """Delegate to a text-prompted segmentation adapter; never falls back silently."""
    if adapter is None:
        raise AdapterUnavailableError("no text segmentation adapter configured")
    track = adapter.segment_text(video, prompt)
    if track.t != video.t:
        raise ShapeMismatchError("adapter returned a track of the wrong length")
    return track


def mask_video(video: VideoClip, track: MaskTrack) -> VideoClip:
    """Gate the clip: pixels outside the mask become exactly zero."""
    if track.shape != video.frames.shape[:3]:
        raise ShapeMismatchError(
            f"track {track.shape} does not match video {video.frames.shape[:3]}"
        )
    gated = video.frames * track.masks[:, :, :, None]
    return VideoClip(gated, video.fps)


class ToyClickSegmenter:
    """Reentrant; pure function of its inputs."""

    def segment(self, frame, clicks, cfg):
        return segment_from_clicks(frame, clicks, cfg)


class ToyTrackPropagator:
    """Reentrant; pure function of its inputs."""

    def propagate(self, video, anchor_index, anchor, cfg):
        return propagate_mask(video, anchor_index, anchor, cfg)


class StoredMaskAdapter:
    """Text adapter that serves precomputed tracks keyed by prompt."""

    def __init__(self, tracks: dict[str, MaskTrack]):
        self._tracks = dict(tracks)

    def segment_text(self, video: VideoClip, prompt: str) -> MaskTrack:
        if prompt not in self._tracks:
            raise AdapterUnavailableError(f"no stored masks for prompt {prompt!r}")
        return self._tracks[prompt]


def save_mask_track(track: MaskTrack, out_dir: str | Path) -> None:
    """One 1-bit PNG per frame plus a JSON index."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t, h, w = track.shape
    for k in range(t):
        Image.fromarray(track.masks[k].astype(bool)).convert("1").save(out / f"{k:05d}.png")
    index = {"frame_count": t, "width": w, "height": h, "source": track.source}
    (out / "index.json").write_text(json.dumps(index))


def load_mask_track(in_dir: str | Path) -> MaskTrack:
    src = Path(in_dir)
    index = json.loads((src / "index.json").read_text())
    masks = np.zeros((index["frame_count"], index["height"], index["width"]), dtype=np.uint8)
    for k in range(index["frame_count"]):
        masks[k] = np.array(Image.open(src / f"{k:05d}.png").convert("1"), dtype=np.uint8)
    return MaskTrack(masks, source=index.get("source", "dataset"))
