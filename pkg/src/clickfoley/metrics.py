"""Correspondence and distribution metrics for generated audio.

The correspondence score embeds every frame and the audio clip into one
joint space (through a pluggable embedder) and takes the cosine between
the mean frame embedding and the audio embedding. Corpus-level similarity
uses the Frechet distance between Gaussian fits of two embedding sets,
with the matrix square root computed by symmetric eigendecomposition and
negative-eigenvalue clamping so near-singular covariances stay finite.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import torch
from torch import nn

from . import media
from .dataset import Triplet
from .media import AudioWave, VideoClip
from .ocav import contrastive_loss_t, cosine_similarity

JOINT_DIM_DEFAULT = 32


class JointEmbedder(Protocol):
    def embed_image(self, frame: np.ndarray) -> np.ndarray: ...
    def embed_audio(self, wave: AudioWave) -> np.ndarray: ...


def cav_score(frames: VideoClip, wave: AudioWave, embedder: JointEmbedder) -> float:
    """Cosine between the mean per-frame image embedding and the audio embedding."""
    if frames.t < 1:
        raise ValueError("need at least one frame")
    if wave.n_samples == 0:
        raise ValueError("empty waveform")
    image_mean = np.mean([embedder.embed_image(f) for f in frames.frames], axis=0)
    return cosine_similarity(image_mean, embedder.embed_audio(wave))


def _sqrtm_psd(m: np.ndarray) -> np.ndarray:
    """Square root of a (near-)PSD symmetric matrix; negative modes clamp to 0."""
    w, v = np.linalg.eigh((m + m.T) / 2.0)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(x: np.ndarray, y: np.ndarray) -> float:
    """||mu_x - mu_y||^2 + Tr(S_x + S_y - 2 (S_x S_y)^{1/2}) over two vector sets."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ValueError("need two 2-D sets with equal dimension")
    if x.shape[0] < 2 or y.shape[0] < 2:
        raise ValueError("need at least two vectors per set")
    mu_x, mu_y = x.mean(axis=0), y.mean(axis=0)
    s_x = np.cov(x, rowvar=False)
    s_y = np.cov(y, rowvar=False)
    root_x = _sqrtm_psd(s_x)
    inner = _sqrtm_psd(root_x @ s_y @ root_x)
    trace_term = np.trace(s_x) + np.trace(s_y) - 2.0 * np.trace(inner)
    return float(np.sum((mu_x - mu_y) ** 2) + max(trace_term, 0.0))


@dataclass
class EvalSample:
    id: str
    audio: AudioWave
    video: VideoClip | None = None


@dataclass
class EvalReport:
    cav_mean: float
    fd: float
    per_sample: list[dict] = field(default_factory=list)
    partial: bool = False

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        return cls(**json.loads(Path(path).read_text()))


def evaluate(
    generated: Sequence[EvalSample],
    reference: Sequence[EvalSample],
    embedder: JointEmbedder,
) -> EvalReport:
    """Per-sample correspondence over ``generated`` plus corpus-level Frechet
    distance between the two audio-embedding clouds. Samples whose embedding
    fails are recorded with a null score and flag the report as partial."""
    if not generated or not reference:
        raise ValueError("both sample lists must be nonempty")
    per_sample = []
    partial = False
    scores = []
    for s in generated:
        try:
            if s.video is None:
                raise ValueError("no frames available for correspondence")
            score = cav_score(s.video, s.audio, embedder)
            scores.append(score)
            per_sample.append({"id": s.id, "cav": score})
        except (ValueError, ArithmeticError) as exc:
            partial = True
            per_sample.append({"id": s.id, "cav": None, "error": str(exc)})
    gen_emb = np.stack([embedder.embed_audio(s.audio) for s in generated])
    ref_emb = np.stack([embedder.embed_audio(s.audio) for s in reference])
    fd = frechet_distance(gen_emb, ref_emb)
    cav_mean = float(np.mean(scores)) if scores else float("nan")
    return EvalReport(cav_mean=cav_mean, fd=fd, per_sample=per_sample, partial=partial)


def load_eval_samples(root: str | Path) -> list[EvalSample]:
    """Read samples from a directory: either store-layout subdirectories
    (audio.wav plus optional video.avi) or flat ``<id>.wav`` files."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"no such directory: {root}")
    samples = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        wav = sub / "audio.wav"
        if not wav.exists():
            continue
        video = None
        for cand in ("video.avi", "video.mp4"):
            if (sub / cand).exists():
                video = media.load_video(sub / cand)
                break
        samples.append(EvalSample(id=sub.name, audio=media.load_audio(wav), video=video))
    for wav in sorted(root.glob("*.wav")):
        samples.append(EvalSample(id=wav.stem, audio=media.load_audio(wav)))
    if not samples:
        raise ValueError(f"no samples found under {root}")
    return samples


class TwoTowerEmbedder(nn.Module):
    """Small trainable image/audio towers sharing one output space.

    Image tower: linear map over 16x16 downsampled pixels. Audio tower:
    linear map over the time-pooled mel profile. Deterministic per seed;
    reentrant once trained (forward only).
    """

    PATCH = 16

    def __init__(self, d: int = JOINT_DIM_DEFAULT, seed: int = 0):
        super().__init__()
        torch.manual_seed(seed)
        self.d = d
        self.image_tower = nn.Linear(self.PATCH * self.PATCH * 3, d)
        self.audio_tower = nn.Linear(media.N_MELS, d)

    def _image_feats(self, frame: np.ndarray) -> torch.Tensor:
        import cv2

        small = cv2.resize(frame, (self.PATCH, self.PATCH), interpolation=cv2.INTER_AREA)
        return torch.from_numpy(small.reshape(-1).astype(np.float32)) / 255.0

    def _audio_feats(self, wave: AudioWave) -> torch.Tensor:
        mel = media.mel_spectrogram(wave, hop=media.HOP_OCAV)
        profile = mel.values.mean(axis=0)  # [n_mels]
        return torch.from_numpy(((profile - media.LOG_FLOOR) / -media.LOG_FLOOR).astype(np.float32))

    def embed_image(self, frame: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            return self.image_tower(self._image_feats(frame)).numpy()

    def embed_audio(self, wave: AudioWave) -> np.ndarray:
        with torch.no_grad():
            return self.audio_tower(self._audio_feats(wave)).numpy()


def train_two_tower(
    triplets: Sequence[Triplet],
    d: int = JOINT_DIM_DEFAULT,
    steps: int = 200,
    batch_size: int = 8,
    lr: float = 1e-2,
    temperature: float = 0.1,
    seed: int = 0,
) -> TwoTowerEmbedder:
    """Align the two towers on (middle frame, audio) pairs contrastively."""
    model = TwoTowerEmbedder(d=d, seed=seed)
    image_feats = torch.stack([model._image_feats(t.video.frames[t.video.t // 2]) for t in triplets])
    audio_feats = torch.stack([model._audio_feats(t.audio) for t in triplets])
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    for _ in range(steps):
        idx = rng.integers(0, len(triplets), size=min(batch_size, len(triplets)))
        v = model.image_tower(image_feats[idx])
        a = model.audio_tower(audio_feats[idx])
        loss = contrastive_loss_t(v, a, temperature)
        opt.zero_grad()
        loss.backward()
        opt.step()
    model.eval()
    return model
