"""End-to-end wiring: checkpoints in, clicks in, audio out.

Also owns the generator's training orchestration: conditions are built
once per sample from the frozen alignment encoders plus the frame
embedder, mels are compressed by the autoencoder, and the denoiser is
trained on the standardized latents.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import diffusion, media
from .dataset import Triplet
from .encoders import (
    EncoderConfig,
    MveEncoder,
    RandomProjectionFrameEmbedder,
    condition_embedding,
    frame_semantic_embed,
    mve_features,
)
from .errors import ClickFoleyError
from .media import AudioWave, MelSpectrogram, VideoClip
from .ocav import load_ocav_checkpoint
from .segmentation import MaskTrack, mask_video

OCAV_CKPT = "ocav.npz"
LDM_CKPT = "ldm.npz"
FRAME_EMBED_SEED = 0


@dataclass
class GenerationAssets:
    mve: MveEncoder
    enc_cfg: EncoderConfig
    ldm: diffusion.LdmModel
    frame_embedder: RandomProjectionFrameEmbedder


def load_assets(ckpt_dir: str | Path) -> GenerationAssets:
    ckpt_dir = Path(ckpt_dir)
    ocav_path = ckpt_dir / OCAV_CKPT
    ldm_path = ckpt_dir / LDM_CKPT
    for p in (ocav_path, ldm_path):
        if not p.exists():
            raise ClickFoleyError(f"missing checkpoint: {p}")
    mve, _, enc_cfg = load_ocav_checkpoint(ocav_path)
    ldm = diffusion.load_ldm_checkpoint(ldm_path)
    if ldm.cfg.cond_dim != enc_cfg.d:
        raise ClickFoleyError(
            f"checkpoint mismatch: condition dim {ldm.cfg.cond_dim} vs encoder d {enc_cfg.d}"
        )
    embedder = RandomProjectionFrameEmbedder(d=enc_cfg.d, seed=FRAME_EMBED_SEED)
    return GenerationAssets(mve=mve, enc_cfg=enc_cfg, ldm=ldm, frame_embedder=embedder)


def build_condition(
    video: VideoClip,
    track: MaskTrack,
    mve: MveEncoder,
    frame_embedder: RandomProjectionFrameEmbedder,
) -> np.ndarray:
    """Condition rows [T, d]: object features plus per-frame semantics."""
    x_v = mve_features(video, track, mve)
    x_star = frame_semantic_embed(mask_video(video, track), frame_embedder)
    return condition_embedding(x_v, x_star.astype(x_v.dtype))


def generate_audio(
    video: VideoClip,
    track: MaskTrack,
    assets: GenerationAssets,
    sampler: diffusion.SamplerConfig,
    griffin_lim_iters: int = 32,
) -> tuple[AudioWave, MelSpectrogram]:
    """Sample a mel for the selected object and reconstruct a waveform."""
    x_c = build_condition(video, track, assets.mve, assets.frame_embedder)
    mel = diffusion.sample(x_c, sampler, assets.ldm)
    wave = media.inverse_mel(mel, iterations=griffin_lim_iters)
    return wave, mel


def train_ldm(
    triplets: Sequence[Triplet],
    ocav_ckpt: str | Path,
    cfg: diffusion.LdmConfig,
    out_path: str | Path | None = None,
    log_path: str | Path | None = None,
) -> diffusion.LdmModel:
    """Train autoencoder + denoiser on the corpus, conditioned through the
    frozen alignment encoders. Returns the generator model."""
    if not triplets:
        raise ValueError("empty training set")
    mve, _, enc_cfg = load_ocav_checkpoint(ocav_ckpt)
    if cfg.cond_dim != enc_cfg.d:
        cfg = diffusion.LdmConfig(**{**cfg.__dict__, "cond_dim": enc_cfg.d})
    embedder = RandomProjectionFrameEmbedder(d=enc_cfg.d, seed=FRAME_EMBED_SEED)
    mels, conds = [], []
    for t in triplets:
        mels.append(media.ldm_mel(t.audio).values)
        conds.append(build_condition(t.video, t.masks, mve, embedder))
    model = diffusion.build_ldm(cfg)
    diffusion.train_autoencoder(mels, model)
    with torch.no_grad():
        latents = model.autoencoder.encode(torch.from_numpy(np.stack(mels)).float())
    cond_tensor = torch.from_numpy(np.stack(conds)).float()
    diffusion.train_denoiser(model, latents, cond_tensor, log_path=log_path)
    if out_path:
        diffusion.save_ldm_checkpoint(out_path, model)
    return model
