"""Training-set augmentation: mask-area loudness shaping and video stitching.

Loudness modulation scales the waveform by the object's normalized
on-screen area over time, so sound dies out exactly when the object leaves
the view. Stitching pastes two clips side by side (squeezing both back to
the original frame size), unions their mask tracks the same way and
overlaps their audio, teaching the encoders to key on the selected object
rather than the whole frame.
"""
from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .dataset import Triplet
from .errors import ShapeMismatchError
from .media import AudioWave, VideoClip
from .segmentation import MaskTrack

HORIZONTAL = "horizontal"
VERTICAL = "vertical"


@dataclass(frozen=True)
class StitchSpec:
    direction: str = HORIZONTAL
    partner_id: str = ""
    seed: int = 0

    def __post_init__(self):
        if self.direction not in (HORIZONTAL, VERTICAL):
            raise ValueError(f"direction must be horizontal|vertical, got {self.direction}")


def area_ratios(track: MaskTrack) -> np.ndarray:
    """Per-frame fraction of set mask pixels, in [0, 1]."""
    t, h, w = track.shape
    return track.masks.reshape(t, -1).sum(axis=1).astype(np.float64) / float(h * w)


def normalize_ratios(ratios: np.ndarray) -> np.ndarray:
    """Scale so the maximum is 1; an all-zero input stays all zero."""
    ratios = np.asarray(ratios, dtype=np.float64)
    peak = ratios.max() if ratios.size else 0.0
    return ratios / peak if peak > 0 else np.zeros_like(ratios)


def loudness_envelope(normalized: np.ndarray, n_samples: int) -> np.ndarray:
    """Linear interpolation of per-frame gains to sample resolution.

    Frame k maps to sample position k * (n_samples - 1) / (T - 1), pinning
    the first/last frame to the first/last sample; a single frame broadcasts.
    """
    normalized = np.asarray(normalized, dtype=np.float64)
    if normalized.ndim != 1 or normalized.size < 1:
        raise ShapeMismatchError("envelope needs a 1-D, nonempty gain vector")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    t = normalized.size
    if t == 1:
        return np.full(n_samples, normalized[0])
    positions = np.linspace(0.0, t - 1.0, n_samples)
    return np.interp(positions, np.arange(t), normalized)


def apply_mlm(wave: AudioWave, track: MaskTrack) -> AudioWave:
    """Element-wise product of the waveform with the mask-area envelope."""
    env = loudness_envelope(normalize_ratios(area_ratios(track)), wave.n_samples)
    return AudioWave(wave.samples * env, wave.sample_rate)


def mix_audio(a: AudioWave, b: AudioWave) -> AudioWave:
    """Sample-wise sum, renormalized only when the sum would clip."""
    if a.sample_rate != b.sample_rate:
        raise ShapeMismatchError("cannot mix waves with different sample rates")
    if a.n_samples != b.n_samples:
        raise ShapeMismatchError("cannot mix waves of different lengths")
    mixed = a.samples + b.samples
    peak = np.max(np.abs(mixed)) if mixed.size else 0.0
    return AudioWave(mixed / max(1.0, peak), a.sample_rate)


def _stitch_and_squeeze(a: np.ndarray, b: np.ndarray, direction: str) -> np.ndarray:
    """Concatenate two [T,H,W,...] stacks along an image axis, resize back."""
    axis = 2 if direction == HORIZONTAL else 1
    glued = np.concatenate([a, b], axis=axis)
    t, h, w = a.shape[:3]
    out = np.empty_like(a, dtype=np.float64)
    for k in range(t):
        out[k] = cv2.resize(glued[k].astype(np.float64), (w, h), interpolation=cv2.INTER_AREA)
    return out


def stitch_videos(a: Triplet, b: Triplet, spec: StitchSpec) -> Triplet:
    """Stitch two equal-shape triplets into one (aspect distortion accepted)."""
    if a.video.frames.shape != b.video.frames.shape:
        raise ShapeMismatchError("stitching needs equal video shapes")
    if a.masks.shape != b.masks.shape:
        raise ShapeMismatchError("stitching needs equal track shapes")
    if a.audio.n_samples != b.audio.n_samples:
        raise ShapeMismatchError("stitching needs equal audio lengths")
    frames = _stitch_and_squeeze(a.video.frames, b.video.frames, spec.direction)
    frames = np.clip(np.round(frames), 0, 255).astype(np.uint8)
    masks = _stitch_and_squeeze(
        a.masks.masks.astype(np.float64), b.masks.masks.astype(np.float64), spec.direction
    )
    masks = (masks >= 0.5).astype(np.uint8)
    audio = mix_audio(a.audio, b.audio)
    provenance = {
        "augmentation": "stitch",
        "parents": [a.provenance.get("id", ""), spec.partner_id],
        "direction": spec.direction,
        "seed": spec.seed,
    }
    return Triplet(
        video=VideoClip(frames, a.video.fps),
        masks=MaskTrack(masks, source=a.masks.source),
        audio=audio,
        class_text=f"{a.class_text} + {b.class_text}",
        provenance=provenance,
    )


def augment_dataset(train: list[Triplet], ratio: float, seed: int) -> list[Triplet]:
    """Append round(ratio * N) stitched samples; originals are kept."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must lie in [0, 1]")
    n = len(train)
    if ratio > 0 and n < 2:
        raise ValueError("stitch augmentation needs at least two samples")
    n_new = int(round(ratio * n))
    if n_new == 0:
        return list(train)
    rng = np.random.default_rng(seed)
    bases = rng.permutation(n)[:n_new]
    out = list(train)
    for base in bases:
        partner = int(rng.integers(0, n - 1))
        if partner >= base:
            partner += 1  # uniform over the other samples, never self
        direction = HORIZONTAL if rng.integers(0, 2) == 0 else VERTICAL
        spec = StitchSpec(direction=direction, partner_id=str(partner), seed=seed)
        out.append(stitch_videos(train[int(base)], train[partner], spec))
    return out
