"""Corpus construction and the triplet store.

A corpus lives under one root directory: one subdirectory per sample
holding ``video.avi`` (FFV1, lossless), ``audio.wav`` (PCM16 mono),
``masks/`` (1-bit PNGs + index) and ``meta.json``, plus a versioned
``manifest.json`` at the root. The synthetic generator renders one moving
colored blob per class on a coarse-noise background and ties a
class-specific tone's amplitude to the blob's on-screen area, so ground
truth masks, motion and loudness are all analytically known.
"""
from __future__ import annotations

import hashlib
import json
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from . import media
from .errors import AdapterUnavailableError, ClickFoleyError, ShapeMismatchError
from .media import AudioWave, VideoClip
from .segmentation import MaskTrack, StoredMaskAdapter, load_mask_track, save_mask_track

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"


@dataclass
class Triplet:
    """The training/inference unit: a clip, its object masks, its audio."""

    video: VideoClip
    masks: MaskTrack
    audio: AudioWave
    class_text: str = ""
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.video.t != self.masks.t:
            raise ShapeMismatchError(
                f"video has {self.video.t} frames but track has {self.masks.t}"
            )
        if (self.video.height, self.video.width) != self.masks.shape[1:]:
            raise ShapeMismatchError("mask size does not match the frames")
        if abs(self.audio.duration - self.video.duration) > 1.0 / self.video.fps + 1e-9:
            raise ShapeMismatchError(
                f"audio runs {self.audio.duration:.3f}s but video {self.video.duration:.3f}s"
            )

    @property
    def duration(self) -> float:
        return self.video.duration


@dataclass
class ScoredSample:
    id: str
    class_text: str
    sim_audio_text: float
    sim_image_text: float

    @property
    def mean_sim(self) -> float:
        return 0.5 * (self.sim_audio_text + self.sim_image_text)


@dataclass
class Manifest:
    root: str
    entries: list[dict] = field(default_factory=list)
    version: int = MANIFEST_VERSION

    def __post_init__(self):
        ids = [e["id"] for e in self.entries]
        if len(ids) != len(set(ids)):
            raise ClickFoleyError("manifest ids must be unique")

    def entry(self, sample_id: str) -> dict:
        for e in self.entries:
            if e["id"] == sample_id:
                return e
        raise KeyError(f"unknown sample id: {sample_id}")

    def ids(self, split: str | None = None) -> list[str]:
        return [e["id"] for e in self.entries if split is None or e.get("split") == split]

    def save(self, path: str | Path | None = None) -> Path:
        """Atomic write (temp file + rename)."""
        path = Path(path) if path else Path(self.root) / MANIFEST_NAME
        payload = {"version": self.version, "entries": self.entries}
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(payload, indent=1, sort_keys=True))
        os.replace(tmp, path)
        return path

    @classmethod
    def load(cls, root: str | Path) -> "Manifest":
        root = Path(root)
        path = root if root.is_file() else root / MANIFEST_NAME
        payload = json.loads(path.read_text())
        if payload.get("version") != MANIFEST_VERSION:
            raise ClickFoleyError(f"unsupported manifest version {payload.get('version')}")
        return cls(root=str(path.parent), entries=payload["entries"])


class TextAudioEmbedder(Protocol):
    def embed_text(self, text: str) -> np.ndarray: ...
    def embed_audio(self, wave: AudioWave) -> np.ndarray: ...


class TextImageEmbedder(Protocol):
    def embed_text(self, text: str) -> np.ndarray: ...
    def embed_image(self, frame: np.ndarray) -> np.ndarray: ...


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


class ToyTextAudioEmbedder:
    """Deterministic random-projection stand-in for a text-audio tower pair."""

    def __init__(self, dim: int = 64, seed: int = 0):
        self.dim = dim
        self.seed = seed

    def _text_rng(self, text: str):
        digest = hashlib.sha256(f"{self.seed}:{text}".encode()).digest()
        return np.random.default_rng(np.frombuffer(digest[:16], dtype=np.uint64))

    def embed_text(self, text: str) -> np.ndarray:
        return _unit(self._text_rng(text).standard_normal(self.dim))

    def embed_audio(self, wave: AudioWave) -> np.ndarray:
        mel = media.mel_spectrogram(wave, hop=media.HOP_OCAV)
        feats = mel.values.mean(axis=0)
        rng = np.random.default_rng(self.seed + 1)
        proj = rng.standard_normal((feats.shape[0], self.dim))
        return _unit(feats @ proj)


class ToyTextImageEmbedder:
    def __init__(self, dim: int = 64, seed: int = 0):
        self.dim = dim
        self.seed = seed

    def embed_text(self, text: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed + 2}:{text}".encode()).digest()
        rng = np.random.default_rng(np.frombuffer(digest[:16], dtype=np.uint64))
        return _unit(rng.standard_normal(self.dim))

    def embed_image(self, frame: np.ndarray) -> np.ndarray:
        import cv2

        small = cv2.resize(frame, (8, 8), interpolation=cv2.INTER_AREA).astype(np.float64)
        rng = np.random.default_rng(self.seed + 3)
        proj = rng.standard_normal((small.size, self.dim))
        return _unit(small.reshape(-1) @ proj)


def _cos(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity of a zero embedding")
    return float(np.dot(a, b) / (na * nb))


def score_sample(
    triplet: Triplet,
    text: str,
    text_audio_embedder: TextAudioEmbedder,
    text_image_embedder: TextImageEmbedder,
    sample_id: str = "",
) -> ScoredSample:
    """Audio-text and image-text cosine similarities plus their mean."""
    mid_frame = triplet.video.frames[triplet.video.t // 2]
    sim_at = _cos(text_audio_embedder.embed_audio(triplet.audio), text_audio_embedder.embed_text(text))
    sim_it = _cos(text_image_embedder.embed_image(mid_frame), text_image_embedder.embed_text(text))
    return ScoredSample(id=sample_id, class_text=text, sim_audio_text=sim_at, sim_image_text=sim_it)


def select_top_k(
    scored: Sequence[ScoredSample], k_train: int, k_test: int, root: str = ""
) -> Manifest:
    """Per class: sort by mean similarity (ties by id), take k_train then k_test.

    Classes with fewer than k_train + k_test samples contribute everything
    they have (train filled first) with a warning.
    """
    by_class: dict[str, list[ScoredSample]] = {}
    for s in scored:
        by_class.setdefault(s.class_text, []).append(s)
    entries: list[dict] = []
    for class_text in sorted(by_class):
        group = sorted(by_class[class_text], key=lambda s: (-s.mean_sim, s.id))
        if len(group) < k_train + k_test:
            warnings.warn(
                f"class {class_text!r} has {len(group)} samples, "
                f"wanted {k_train + k_test}; taking all"
            )
        for rank, s in enumerate(group[: k_train + k_test]):
            entries.append(
                {
                    "id": s.id,
                    "class_text": s.class_text,
                    "split": "train" if rank < k_train else "test",
                    "paths": {
                        "video": f"{s.id}/video.avi",
                        "audio": f"{s.id}/audio.wav",
                        "masks": f"{s.id}/masks",
                    },
                    "scores": {
                        "sim_audio_text": s.sim_audio_text,
                        "sim_image_text": s.sim_image_text,
                        "mean_sim": s.mean_sim,
                    },
                }
            )
    return Manifest(root=root, entries=entries)


def attach_masks(manifest: Manifest, adapter=None) -> Manifest:
    """Ensure every entry has a usable mask track; flag the ones that do not.

    Entries whose mask directory already exists are untouched. For the rest,
    ``adapter`` (a TextSegmenter) is invoked with the entry's class text and
    the result is persisted; entries that still cannot get masks are flagged
    ``masks_missing`` rather than dropped.
    """
    root = Path(manifest.root)
    for entry in manifest.entries:
        mask_dir = root / entry["paths"]["masks"]
        if (mask_dir / "index.json").exists():
            entry.pop("masks_missing", None)
            continue
        if adapter is not None:
            try:
                video = media.load_video(root / entry["paths"]["video"])
                track = adapter.segment_text(video, entry["class_text"])
                save_mask_track(track, mask_dir)
                entry.pop("masks_missing", None)
                continue
            except (AdapterUnavailableError, ClickFoleyError):
                pass
        entry["masks_missing"] = True
    return manifest


def save_triplet(triplet: Triplet, sample_dir: str | Path) -> None:
    out = Path(sample_dir)
    out.mkdir(parents=True, exist_ok=True)
    media.save_video(triplet.video, out / "video.avi")
    media.write_wav(triplet.audio, out / "audio.wav")
    save_mask_track(triplet.masks, out / "masks")
    meta = {"class_text": triplet.class_text, "provenance": triplet.provenance}
    (out / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))


def load_triplet(manifest: Manifest, sample_id: str) -> Triplet:
    """Load and preprocess one sample (4 fps, 224x224, 16 kHz)."""
    entry = manifest.entry(sample_id)
    root = Path(manifest.root)
    for key in ("video", "audio", "masks"):
        path = root / entry["paths"][key]
        if not path.exists():
            raise FileNotFoundError(f"sample {sample_id}: missing {key} at {path}")
    video = media.load_video(root / entry["paths"]["video"])
    audio = media.load_audio(root / entry["paths"]["audio"])
    masks = load_mask_track(root / entry["paths"]["masks"])
    meta_path = root / entry["id"] / "meta.json"
    provenance = {}
    if meta_path.exists():
        provenance = json.loads(meta_path.read_text()).get("provenance", {})
    return Triplet(video, masks, audio, class_text=entry["class_text"], provenance=provenance)


def class_tone_hz(class_index: int) -> float:
    return 220.0 * 2.0 ** (class_index / 8.0)


def _noise_background(rng, side: int, block: int = 8) -> np.ndarray:
    coarse = rng.integers(0, 256, (side // block, side // block, 3), dtype=np.uint8)
    return np.repeat(np.repeat(coarse, block, axis=0), block, axis=1)


def _class_palette(n_classes: int) -> np.ndarray:
    import colorsys

    colors = []
    for c in range(n_classes):
        r, g, b = colorsys.hsv_to_rgb(c / max(n_classes, 1), 0.95, 0.95)
        colors.append([int(255 * r), int(255 * g), int(255 * b)])
    return np.array(colors, dtype=np.uint8)


def render_toy_sample(
    class_index: int,
    n_classes: int,
    rng: np.random.Generator,
    duration: float = 10.0,
    fps: float = media.DEFAULT_FPS,
    side: int = media.DEFAULT_SIDE,
    sample_rate: int = media.DEFAULT_SAMPLE_RATE,
) -> Triplet:
    """One synthetic triplet: moving blob + area-tied tone."""
    t_frames = int(round(duration * fps))
    n_samples = int(round(duration * sample_rate))
    color = _class_palette(n_classes)[class_index]
    background = _noise_background(rng, side)
    # class-specific motion: drift classes sweep toward an edge (grazing it,
    # so some area always stays on screen), orbit classes circle the center
    drifts = class_index % 3 == 2
    angle = 2.0 * np.pi * class_index / max(n_classes, 1)
    r0 = side * (0.11 + 0.02 * (class_index % 4)) * (0.9 + 0.2 * rng.random())
    phase = rng.uniform(0, 2 * np.pi)
    times = np.arange(t_frames) / fps
    if drifts:
        speed = side * 0.62 / duration
        cx = side * 0.28 + speed * times * np.cos(angle % (np.pi / 3))
        cy = side * 0.5 + 0.15 * side * np.sin(2 * np.pi * times / duration + phase)
    else:
        cx = side * 0.5 + side * 0.27 * np.sin(2 * np.pi * times / duration + phase)
        cy = side * 0.5 + side * 0.27 * np.cos(2 * np.pi * times * (1 + class_index % 2) / duration + phase)
    radius = r0 * (1.0 + 0.35 * np.sin(2 * np.pi * times * 0.2 + angle))

    frames = np.empty((t_frames, side, side, 3), dtype=np.uint8)
    masks = np.zeros((t_frames, side, side), dtype=np.uint8)
    yy, xx = np.mgrid[0:side, 0:side]
    for k in range(t_frames):
        blob = (yy - cy[k]) ** 2 + (xx - cx[k]) ** 2 <= radius[k] ** 2
        frames[k] = background
        frames[k][blob] = color
        masks[k][blob] = 1

    ratios = masks.reshape(t_frames, -1).mean(axis=1)
    peak = ratios.max()
    env_frames = ratios / peak if peak > 0 else ratios
    positions = np.linspace(0, t_frames - 1, n_samples) if t_frames > 1 else np.zeros(n_samples)
    envelope = np.interp(positions, np.arange(t_frames), env_frames)
    tone_hz = class_tone_hz(class_index)
    tt = np.arange(n_samples) / sample_rate
    samples = 0.7 * envelope * np.sin(2 * np.pi * tone_hz * tt + rng.uniform(0, 2 * np.pi))

    return Triplet(
        video=VideoClip(frames, fps),
        masks=MaskTrack(masks, source="dataset"),
        audio=AudioWave(samples, sample_rate),
        class_text=f"toy object {class_index:02d}",
        provenance={"generator": "toy", "class_index": class_index, "tone_hz": tone_hz},
    )


def generate_toy_corpus(
    n_classes: int,
    per_class: int,
    seed: int,
    out_dir: str | Path,
    duration: float = 10.0,
    k_train: int | None = None,
    k_test: int | None = None,
) -> Manifest:
    """Render a corpus to disk and return its manifest (with train/test split)."""
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if k_test is None:
        k_test = max(1, per_class // 5) if per_class >= 2 else 0
    if k_train is None:
        k_train = per_class - k_test
    audio_emb = ToyTextAudioEmbedder(seed=seed)
    image_emb = ToyTextImageEmbedder(seed=seed)
    scored: list[ScoredSample] = []
    for c in range(n_classes):
        for i in range(per_class):
            rng = np.random.default_rng([seed, c, i])
            triplet = render_toy_sample(c, n_classes, rng, duration=duration)
            sample_id = f"c{c:02d}_s{i:03d}"
            save_triplet(triplet, out / sample_id)
            s = score_sample(triplet, triplet.class_text, audio_emb, image_emb, sample_id=sample_id)
            scored.append(s)
    manifest = select_top_k(scored, k_train, k_test, root=str(out))
    manifest = attach_masks(manifest)
    manifest.save()
    return manifest
