"""Contrastive audio-visual fine-tuning over object-gated features.

Each step samples time-synchronized 4-second crops from the training
triplets, optionally reshapes their audio by the mask-area envelope,
pools both towers' features over time and scores every visual/audio
pairing in the batch with temperature-scaled cosine similarity. The loss
is the symmetric pair of cross-entropies over rows and columns of that
matrix. The gated-video conv backbone stays frozen except for its final
projection block; the mask and audio towers train fully.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import augment, checkpoints
from .dataset import Triplet
from .encoders import (
    AudioEncoder,
    EncoderConfig,
    MveEncoder,
    build_audio_encoder,
    build_mve_encoder,
    l2norm_rows,
    mel_to_tensor,
    track_to_tensor,
    video_to_tensor,
)
from .errors import ShapeMismatchError, TrainingDivergedError
from .media import HOP_OCAV, AudioWave, VideoClip, mel_spectrogram
from .segmentation import MaskTrack, mask_video

CHECKPOINT_KIND = "ocav"


@dataclass
class OCAVConfig:
    batch_size: int = 8
    temperature: float = 0.07
    clip_seconds: float = 4.0
    lr: float = 1e-4
    steps: int = 1000
    seed: int = 0
    mlm_prob: float = 1.0
    hop: int = HOP_OCAV
    log_every: int = 25

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


@dataclass
class FeaturePairBatch:
    """Pooled visual/audio feature pairs [B, d]."""

    visual: np.ndarray
    audio: np.ndarray

    def __post_init__(self):
        self.visual = np.asarray(self.visual, dtype=np.float64)
        self.audio = np.asarray(self.audio, dtype=np.float64)
        if self.visual.shape != self.audio.shape or self.visual.ndim != 2:
            raise ShapeMismatchError(
                f"paired features must share [B, d]: {self.visual.shape} vs {self.audio.shape}"
            )

    @property
    def b(self) -> int:
        return self.visual.shape[0]


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.dot(a, b) / (na * nb))


def contrastive_loss_t(visual: torch.Tensor, audio: torch.Tensor, temperature: float) -> torch.Tensor:
    """Differentiable symmetric contrastive objective (torch core)."""
    if not (torch.isfinite(visual).all() and torch.isfinite(audio).all()):
        raise TrainingDivergedError("non-finite features in contrastive loss")
    norms_v = torch.linalg.vector_norm(visual, dim=1)
    norms_a = torch.linalg.vector_norm(audio, dim=1)
    if (norms_v == 0).any() or (norms_a == 0).any():
        raise ValueError("contrastive loss is undefined for zero feature vectors")
    sims = l2norm_rows(visual) @ l2norm_rows(audio).T / temperature
    row = torch.diagonal(torch.log_softmax(sims, dim=1))
    col = torch.diagonal(torch.log_softmax(sims, dim=0))
    return (-0.5 * row - 0.5 * col).mean()


def contrastive_loss(batch: FeaturePairBatch, temperature: float) -> float:
    return float(
        contrastive_loss_t(
            torch.from_numpy(batch.visual), torch.from_numpy(batch.audio), temperature
        )
    )


def retrieval_accuracy(batch: FeaturePairBatch) -> float:
    """Top-1 accuracy of matching each visual row to its audio row."""
    if batch.b < 2:
        raise ValueError("retrieval accuracy needs at least two pairs")
    sims = l2norm_rows(batch.visual) @ l2norm_rows(batch.audio).T
    return float((np.argmax(sims, axis=1) == np.arange(batch.b)).mean())


def sample_sync_clip(triplet: Triplet, seconds: float, rng: np.random.Generator) -> Triplet:
    """Crop video, masks and audio over one identical frame-aligned window."""
    fps = triplet.video.fps
    n_frames = int(round(seconds * fps))
    if n_frames < 1 or n_frames > triplet.video.t:
        raise ValueError(
            f"cannot cut a {seconds}s clip from a {triplet.video.duration}s triplet"
        )
    start = int(rng.integers(0, triplet.video.t - n_frames + 1))
    sr = triplet.audio.sample_rate
    s0 = int(round(start / fps * sr))
    n_samp = int(round(n_frames / fps * sr))
    samples = triplet.audio.samples[s0 : s0 + n_samp]
    if samples.shape[0] < n_samp:
        samples = np.pad(samples, (0, n_samp - samples.shape[0]))
    return Triplet(
        video=VideoClip(triplet.video.frames[start : start + n_frames], fps),
        masks=MaskTrack(triplet.masks.masks[start : start + n_frames], triplet.masks.source),
        audio=AudioWave(samples, sr),
        class_text=triplet.class_text,
        provenance={**triplet.provenance, "crop_start_frame": start},
    )


def freeze_video_backbone(mve: MveEncoder) -> None:
    """Gated-video conv stack frozen; its projection head and everything
    else stay trainable."""
    for p in mve.video_branch.backbone.parameters():
        p.requires_grad_(False)


def trainable_parameters(mve: MveEncoder, audio: AudioEncoder):
    return [p for p in list(mve.parameters()) + list(audio.parameters()) if p.requires_grad]


def batch_tensors(clips: Sequence[Triplet], hop: int, mlm_mask: Sequence[bool], pool: int = 1):
    """Stack gated videos, mask tracks and (possibly modulated) mels."""
    videos, tracks, mels = [], [], []
    for clip, do_mlm in zip(clips, mlm_mask):
        audio = augment.apply_mlm(clip.audio, clip.masks) if do_mlm else clip.audio
        videos.append(video_to_tensor(mask_video(clip.video, clip.masks), pool))
        tracks.append(track_to_tensor(clip.masks, pool))
        mels.append(mel_to_tensor(mel_spectrogram(audio, hop=hop)))
    return torch.cat(videos), torch.cat(tracks), torch.cat(mels)


def pooled_features(
    mve: MveEncoder, audio_enc: AudioEncoder, videos, tracks, mels
) -> tuple[torch.Tensor, torch.Tensor]:
    x_v = mve(videos, tracks).mean(dim=1)
    x_a = audio_enc(mels).mean(dim=1)
    return x_v, x_a


class _ClipSampler:
    """Per-triplet cache of gated, pooled tensors; crops are cheap slices.

    Gating and spatial pooling commute with temporal cropping, so both are
    done once per triplet. Only the audio path (loudness modulation + mel)
    is recomputed per crop, since it depends on the crop's own mask window.
    """

    def __init__(self, triplets: Sequence[Triplet], cfg: OCAVConfig, pool: int):
        self.cfg = cfg
        self.triplets = list(triplets)
        self.videos = []
        self.tracks = []
        for t in self.triplets:
            gated = mask_video(t.video, t.masks)
            self.videos.append(video_to_tensor(gated, pool).squeeze(0))
            self.tracks.append(track_to_tensor(t.masks, pool).squeeze(0))

    def batch(self, idx: Sequence[int], rng: np.random.Generator, mlm_mask: Sequence[bool]):
        videos, tracks, mels = [], [], []
        for i, do_mlm in zip(idx, mlm_mask):
            t = self.triplets[i]
            fps, sr = t.video.fps, t.audio.sample_rate
            n_frames = int(round(self.cfg.clip_seconds * fps))
            if n_frames < 1 or n_frames > t.video.t:
                raise ValueError(
                    f"cannot cut a {self.cfg.clip_seconds}s clip from a {t.video.duration}s triplet"
                )
            s = int(rng.integers(0, t.video.t - n_frames + 1))
            videos.append(self.videos[i][:, s : s + n_frames])
            tracks.append(self.tracks[i][:, s : s + n_frames])
            s0 = int(round(s / fps * sr))
            n_samp = int(round(n_frames / fps * sr))
            samples = t.audio.samples[s0 : s0 + n_samp]
            if samples.shape[0] < n_samp:
                samples = np.pad(samples, (0, n_samp - samples.shape[0]))
            wave = AudioWave(samples, sr)
            if do_mlm:
                crop_track = MaskTrack(t.masks.masks[s : s + n_frames], t.masks.source)
                wave = augment.apply_mlm(wave, crop_track)
            mels.append(mel_to_tensor(mel_spectrogram(wave, hop=self.cfg.hop)))
        return torch.stack(videos), torch.stack(tracks), torch.cat(mels)


def save_ocav_checkpoint(
    path: str | Path, mve: MveEncoder, audio: AudioEncoder, enc_cfg: EncoderConfig
) -> None:
    arrays = {f"mve.{k}": v for k, v in checkpoints.state_arrays(mve).items()}
    arrays.update({f"audio.{k}": v for k, v in checkpoints.state_arrays(audio).items()})
    checkpoints.save_checkpoint(path, CHECKPOINT_KIND, {"encoder": asdict(enc_cfg)}, arrays)


def load_ocav_checkpoint(path: str | Path) -> tuple[MveEncoder, AudioEncoder, EncoderConfig]:
    meta, arrays = checkpoints.load_checkpoint(path)
    if meta["kind"] != CHECKPOINT_KIND:
        raise ValueError(f"not an alignment checkpoint: {meta['kind']}")
    enc_cfg = EncoderConfig(**meta["config"]["encoder"])
    mve = MveEncoder(enc_cfg)
    audio = AudioEncoder(enc_cfg)
    checkpoints.load_state_arrays(mve, {k[4:]: v for k, v in arrays.items() if k.startswith("mve.")})
    checkpoints.load_state_arrays(audio, {k[6:]: v for k, v in arrays.items() if k.startswith("audio.")})
    mve.eval()
    audio.eval()
    return mve, audio, enc_cfg


def train_ocav(
    triplets: Sequence[Triplet],
    cfg: OCAVConfig,
    enc_cfg: EncoderConfig | None = None,
    out_path: str | Path | None = None,
    log_path: str | Path | None = None,
    eval_batches: Sequence[Sequence[Triplet]] = (),
    stop_at_accuracy: float | None = None,
) -> tuple[MveEncoder, AudioEncoder, list[dict]]:
    """Run the alignment stage; returns the two towers and the step log.

    ``eval_batches`` are held-out triplet groups scored for retrieval
    accuracy at every log step; when ``stop_at_accuracy`` is set, training
    stops early once their mean accuracy reaches it twice in a row.
    """
    if not triplets:
        raise ValueError("empty training set")
    enc_cfg = enc_cfg or EncoderConfig()
    mve = build_mve_encoder(enc_cfg)
    audio_enc = build_audio_encoder(enc_cfg)
    freeze_video_backbone(mve)
    params = trainable_parameters(mve, audio_enc)
    optimizer = torch.optim.Adam(params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    torch.manual_seed(cfg.seed)
    sampler = _ClipSampler(triplets, cfg, enc_cfg.spatial_pool) if cfg.steps else None
    eval_tensors = []
    if eval_batches and cfg.steps:
        eval_rng = np.random.default_rng(0)
        for group in eval_batches:
            group_sampler = _ClipSampler(group, cfg, enc_cfg.spatial_pool)
            eval_tensors.append(
                group_sampler.batch(range(len(group)), eval_rng, [False] * len(group))
            )
    log: list[dict] = []
    log_fh = open(log_path, "w") if log_path else None
    hits = 0
    try:
        for step in range(cfg.steps):
            idx = rng.integers(0, len(triplets), size=cfg.batch_size)
            mlm_mask = rng.random(cfg.batch_size) < cfg.mlm_prob
            videos, tracks, mels = sampler.batch(idx, rng, mlm_mask)
            x_v, x_a = pooled_features(mve, audio_enc, videos, tracks, mels)
            loss = contrastive_loss_t(x_v, x_a, cfg.temperature)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(f"loss became non-finite at step {step}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            if step % cfg.log_every == 0 or step == cfg.steps - 1:
                record = {"step": step, "loss": float(loss.detach())}
                record["retrieval_acc"] = _batch_accuracy(x_v, x_a)
                if eval_tensors:
                    record["holdout_acc"] = _tensor_retrieval(mve, audio_enc, eval_tensors)
                    if stop_at_accuracy is not None:
                        hits = hits + 1 if record["holdout_acc"] >= stop_at_accuracy else 0
                log.append(record)
                if log_fh:
                    log_fh.write(json.dumps(record) + "\n")
                    log_fh.flush()
                if stop_at_accuracy is not None and hits >= 2:
                    break
    finally:
        if log_fh:
            log_fh.close()
    mve.eval()
    audio_enc.eval()
    if out_path:
        save_ocav_checkpoint(out_path, mve, audio_enc, enc_cfg)
    return mve, audio_enc, log


def _batch_accuracy(x_v: torch.Tensor, x_a: torch.Tensor) -> float:
    if x_v.shape[0] < 2:
        return float("nan")
    batch = FeaturePairBatch(x_v.detach().numpy(), x_a.detach().numpy())
    return retrieval_accuracy(batch)


def _tensor_retrieval(mve, audio_enc, tensor_batches) -> float:
    accs = []
    with torch.no_grad():
        for videos, tracks, mels in tensor_batches:
            x_v, x_a = pooled_features(mve, audio_enc, videos, tracks, mels)
            fwd = FeaturePairBatch(x_v.numpy(), x_a.numpy())
            bwd = FeaturePairBatch(x_a.numpy(), x_v.numpy())
            accs.append(0.5 * (retrieval_accuracy(fwd) + retrieval_accuracy(bwd)))
    return float(np.mean(accs))


def evaluate_retrieval(
    mve: MveEncoder,
    audio_enc: AudioEncoder,
    batches: Sequence[Sequence[Triplet]],
    cfg: OCAVConfig,
    rng: np.random.Generator | None = None,
) -> float:
    """Mean top-1 retrieval accuracy (both directions) over triplet batches."""
    rng = rng or np.random.default_rng(0)
    accs = []
    with torch.no_grad():
        for group in batches:
            clips = [sample_sync_clip(t, cfg.clip_seconds, rng) for t in group]
            videos, tracks, mels = batch_tensors(
                clips, cfg.hop, [False] * len(clips), mve.cfg.spatial_pool
            )
            x_v, x_a = pooled_features(mve, audio_enc, videos, tracks, mels)
            fwd = FeaturePairBatch(x_v.numpy(), x_a.numpy())
            bwd = FeaturePairBatch(x_a.numpy(), x_v.numpy())
            accs.append(0.5 * (retrieval_accuracy(fwd) + retrieval_accuracy(bwd)))
    return float(np.mean(accs))
