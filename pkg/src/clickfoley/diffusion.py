"""Conditional latent diffusion over mel spectrograms.

A small convolutional autoencoder compresses the 512x128 log-mel image by
a factor of 8 into a 4x64x16 latent. A noise schedule defines the forward
corruption; the denoiser is a compact U-shaped conv net with an additive
time embedding and single-head cross-attention over the per-frame
condition rows. Sampling walks a strided subset of the schedule either
ancestrally or deterministically, optionally blending conditional and
unconditional noise estimates (the model trains with condition dropout
against a learned null token so the unconditional branch is defined).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from . import checkpoints
from .errors import ShapeMismatchError, TrainingDivergedError
from .media import HOP_LDM, LOG_FLOOR, MelSpectrogram

CHECKPOINT_KIND = "ldm"
MEL_FRAMES = 512
MEL_BINS = 128
LATENT_T = MEL_FRAMES // 8
LATENT_F = MEL_BINS // 8
# affine map taking log-mel values into roughly [-1, 1] for the autoencoder
MEL_SHIFT = LOG_FLOOR / 2.0
MEL_SCALE = -LOG_FLOOR / 2.0

ANCESTRAL = "ancestral"
DETERMINISTIC = "deterministic"


@dataclass
class NoiseSchedule:
    """Forward-process arrays; alpha_bars[0] = 1 by convention."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    t_steps: int

    def alpha_bar(self, t: int) -> float:
        return float(self.alpha_bars[t])


def make_schedule(t_steps: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    if t_steps < 1:
        raise ValueError("t_steps must be >= 1")
    betas = np.linspace(beta_start, beta_end, t_steps, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.concatenate([[1.0], np.cumprod(alphas)])
    return NoiseSchedule(betas, alphas, alpha_bars, t_steps)


def q_sample(z0, t: int, eps, sched: NoiseSchedule):
    """Closed-form forward jump to step t (t = 0 returns z0 exactly)."""
    if not 0 <= t <= sched.t_steps:
        raise ValueError(f"t={t} outside [0, {sched.t_steps}]")
    ab = sched.alpha_bar(t)
    return math.sqrt(ab) * z0 + math.sqrt(1.0 - ab) * eps


def posterior_step(z_t, t: int, eps_hat, sched: NoiseSchedule, noise=None, prev_t: int | None = None):
    """One reverse step t -> prev_t (default t-1) from the noise estimate.

    The mean inverts the forward step; the variance is the forward
    posterior's. With prev_t < t-1 the schedule segment is collapsed into
    one effective step, which is how strided sampling reuses this.
    """
    if not 1 <= t <= sched.t_steps:
        raise ValueError(f"t={t} outside [1, {sched.t_steps}]")
    prev_t = t - 1 if prev_t is None else prev_t
    if not 0 <= prev_t < t:
        raise ValueError(f"prev_t={prev_t} must lie in [0, {t})")
    ab_t = sched.alpha_bar(t)
    ab_prev = sched.alpha_bar(prev_t)
    alpha_eff = ab_t / ab_prev
    mu = (z_t - (1.0 - alpha_eff) / math.sqrt(1.0 - ab_t) * eps_hat) / math.sqrt(alpha_eff)
    if noise is None:
        return mu
    var = (1.0 - ab_prev) / (1.0 - ab_t) * (1.0 - alpha_eff)
    return mu + math.sqrt(max(var, 0.0)) * noise


def posterior_variance(t: int, sched: NoiseSchedule, prev_t: int | None = None) -> float:
    prev_t = t - 1 if prev_t is None else prev_t
    ab_t, ab_prev = sched.alpha_bar(t), sched.alpha_bar(prev_t)
    return (1.0 - ab_prev) / (1.0 - ab_t) * (1.0 - ab_t / ab_prev)


@dataclass
class SamplerConfig:
    steps: int = 50
    cfg_scale: float = 4.5
    mode: str = ANCESTRAL
    seed: int = 0
    # hook for an external alignment-classifier guidance stage; no bundled
    # classifier exists, so any value other than None is rejected
    classifier_scale: float | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.cfg_scale < 0:
            raise ValueError("cfg_scale must be >= 0")
        if self.mode not in (ANCESTRAL, DETERMINISTIC):
            raise ValueError(f"mode must be {ANCESTRAL}|{DETERMINISTIC}")
        if self.classifier_scale is not None:
            raise NotImplementedError("classifier guidance requires an external classifier")


@dataclass
class LdmConfig:
    t_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    latent_channels: int = 4
    ae_channels: int = 16
    denoiser_channels: int = 32
    time_dim: int = 64
    cond_dim: int = 512
    cond_dropout: float = 0.1
    lr: float = 1e-4
    steps: int = 1000
    batch_size: int = 16
    ae_steps: int = 400
    ae_lr: float = 2e-3
    seed: int = 0
    log_every: int = 50


class MelAutoencoder(nn.Module):
    """Factor-8 conv autoencoder between [1, T', M] mels and [C, T'/8, M/8]."""

    def __init__(self, latent_channels: int = 4, width: int = 16):
        super().__init__()
        w = width
        self.encoder = nn.Sequential(
            nn.Conv2d(1, w, 4, 2, 1), nn.SiLU(),
            nn.Conv2d(w, 2 * w, 4, 2, 1), nn.SiLU(),
            nn.Conv2d(2 * w, latent_channels, 4, 2, 1),
        )
        self.decoder = nn.Sequential(
            nn.ConvTranspose2d(latent_channels, 2 * w, 4, 2, 1), nn.SiLU(),
            nn.ConvTranspose2d(2 * w, w, 4, 2, 1), nn.SiLU(),
            nn.ConvTranspose2d(w, 1, 4, 2, 1),
        )

    def encode(self, mel: torch.Tensor) -> torch.Tensor:
        """mel [B, T', M] in log units -> latent [B, C, T'/8, M/8]."""
        x = (mel - MEL_SHIFT) / MEL_SCALE
        return self.encoder(x.unsqueeze(1))

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        x = self.decoder(z).squeeze(1)
        return x * MEL_SCALE + MEL_SHIFT


class _SinusoidalTime(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        half = self.dim // 2
        freqs = torch.exp(
            -math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / half
        )
        ang = t[:, None] * freqs[None, :]
        return torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)


class _CrossAttention(nn.Module):
    """Single-head attention from spatial tokens to condition rows."""

    def __init__(self, channels: int, cond_dim: int):
        super().__init__()
        self.q = nn.Linear(channels, channels)
        self.k = nn.Linear(cond_dim, channels)
        self.v = nn.Linear(cond_dim, channels)
        self.out = nn.Linear(channels, channels)
        self.scale = channels**-0.5

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        tokens = x.flatten(2).transpose(1, 2)  # [B, HW, C]
        att = torch.softmax(self.q(tokens) @ self.k(cond).transpose(1, 2) * self.scale, dim=-1)
        mixed = self.out(att @ self.v(cond))
        return x + mixed.transpose(1, 2).reshape(b, c, h, w)


class ToyDenoiser(nn.Module):
    """U-shaped noise predictor with cross-attention conditioning."""

    def __init__(self, latent_channels: int = 4, width: int = 32, cond_dim: int = 512, time_dim: int = 64):
        super().__init__()
        w = width
        self.time = _SinusoidalTime(time_dim)
        self.time_mlp = nn.Sequential(nn.Linear(time_dim, 2 * w), nn.SiLU(), nn.Linear(2 * w, 2 * w))
        self.down1 = nn.Conv2d(latent_channels, w, 3, 1, 1)
        self.down2 = nn.Conv2d(w, 2 * w, 4, 2, 1)
        self.attn = _CrossAttention(2 * w, cond_dim)
        self.mid = nn.Conv2d(2 * w, 2 * w, 3, 1, 1)
        self.up1 = nn.ConvTranspose2d(2 * w, w, 4, 2, 1)
        self.out = nn.Conv2d(2 * w, latent_channels, 3, 1, 1)
        self.act = nn.SiLU()

    def forward(self, z: torch.Tensor, t: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        """z [B, C, T*, N*], t [B] (step indices), cond [B, T_cond, d]."""
        temb = self.time_mlp(self.time(t.to(z.dtype)))
        h1 = self.act(self.down1(z))
        h2 = self.act(self.down2(h1)) + temb[:, :, None, None]
        h2 = self.attn(h2, cond)
        h2 = self.act(self.mid(h2))
        h3 = self.act(self.up1(h2))
        return self.out(torch.cat([h3, h1], dim=1))


class LdmModel(nn.Module):
    """Autoencoder + denoiser + learned null condition + latent statistics."""

    def __init__(self, cfg: LdmConfig):
        super().__init__()
        self.cfg = cfg
        self.autoencoder = MelAutoencoder(cfg.latent_channels, cfg.ae_channels)
        self.denoiser = ToyDenoiser(cfg.latent_channels, cfg.denoiser_channels, cfg.cond_dim, cfg.time_dim)
        self.null_cond = nn.Parameter(torch.zeros(1, cfg.cond_dim))
        self.register_buffer("z_mean", torch.zeros(cfg.latent_channels))
        self.register_buffer("z_std", torch.ones(cfg.latent_channels))

    def schedule(self) -> NoiseSchedule:
        return make_schedule(self.cfg.t_steps, self.cfg.beta_start, self.cfg.beta_end)

    def standardize(self, z: torch.Tensor) -> torch.Tensor:
        return (z - self.z_mean[:, None, None]) / self.z_std[:, None, None]

    def destandardize(self, z: torch.Tensor) -> torch.Tensor:
        return z * self.z_std[:, None, None] + self.z_mean[:, None, None]

    def null_condition(self, t_cond: int) -> torch.Tensor:
        return self.null_cond.expand(t_cond, -1).unsqueeze(0)


def build_ldm(cfg: LdmConfig) -> LdmModel:
    torch.manual_seed(cfg.seed)
    return LdmModel(cfg)


def encode_latent(mel: MelSpectrogram, model: LdmModel) -> np.ndarray:
    """[T', M] log-mel -> raw latent [C, T'/8, M/8]."""
    if mel.values.shape != (MEL_FRAMES, MEL_BINS):
        raise ShapeMismatchError(f"generator mels are [{MEL_FRAMES},{MEL_BINS}], got {mel.values.shape}")
    with torch.no_grad():
        z = model.autoencoder.encode(torch.from_numpy(mel.values).float().unsqueeze(0))
    return z.squeeze(0).numpy()


def decode_latent(z: np.ndarray, model: LdmModel) -> MelSpectrogram:
    with torch.no_grad():
        mel = model.autoencoder.decode(torch.from_numpy(np.asarray(z)).float().unsqueeze(0))
    return MelSpectrogram(mel.squeeze(0).numpy().astype(np.float64), hop=HOP_LDM)


def ldm_loss(
    z0: torch.Tensor,
    cond: torch.Tensor,
    denoiser: nn.Module,
    sched: NoiseSchedule,
    generator: torch.Generator,
) -> torch.Tensor:
    """Noise-prediction objective: squared error summed per sample, batch-averaged."""
    b = z0.shape[0]
    t = torch.randint(1, sched.t_steps + 1, (b,), generator=generator)
    eps = torch.randn(z0.shape, generator=generator, dtype=z0.dtype)
    ab = torch.from_numpy(sched.alpha_bars[t.numpy()]).to(z0.dtype)
    z_t = ab.sqrt()[:, None, None, None] * z0 + (1 - ab).sqrt()[:, None, None, None] * eps
    pred = denoiser(z_t, t, cond)
    if not torch.isfinite(pred).all():
        raise TrainingDivergedError("denoiser produced non-finite output")
    return ((eps - pred) ** 2).flatten(1).sum(dim=1).mean()


def cfg_predict(
    denoiser: nn.Module,
    z_t: torch.Tensor,
    t: torch.Tensor,
    cond: torch.Tensor,
    null_cond: torch.Tensor,
    scale: float,
) -> torch.Tensor:
    """Guided noise estimate: uncond + scale * (cond - uncond)."""
    if scale == 1.0:
        return denoiser(z_t, t, cond)
    eps_u = denoiser(z_t, t, null_cond)
    if scale == 0.0:
        return eps_u
    return eps_u + scale * (denoiser(z_t, t, cond) - eps_u)


def strided_timesteps(t_steps: int, n: int) -> list[int]:
    """n timesteps from t_steps down to 1, uniformly spaced, deduplicated."""
    ts = np.unique(np.linspace(t_steps, 1, min(n, t_steps)).round().astype(int))[::-1]
    return [int(t) for t in ts]


def reverse_diffuse(
    z: torch.Tensor,
    timesteps: Sequence[int],
    eps_fn: Callable[[torch.Tensor, int], torch.Tensor],
    sched: NoiseSchedule,
    mode: str = ANCESTRAL,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Iterate the reverse chain over ``timesteps`` (descending, ends near 1)."""
    for i, t in enumerate(timesteps):
        prev_t = timesteps[i + 1] if i + 1 < len(timesteps) else 0
        eps_hat = eps_fn(z, t)
        noise = None
        if mode == ANCESTRAL and prev_t > 0:
            noise = torch.randn(z.shape, generator=generator, dtype=z.dtype)
        z = posterior_step(z, t, eps_hat, sched, noise=noise, prev_t=prev_t)
        if not torch.isfinite(z).all():
            raise TrainingDivergedError(f"sampling diverged at step t={t}")
    return z


def sample_latent(
    x_c: np.ndarray,
    cfg: SamplerConfig,
    model: LdmModel,
    sched: NoiseSchedule | None = None,
) -> torch.Tensor:
    """Reverse-diffuse one latent [1, C, T*, N*] in the standardized space."""
    sched = sched or model.schedule()
    cond = torch.from_numpy(np.asarray(x_c)).float().unsqueeze(0)
    null = model.null_condition(cond.shape[1])
    generator = torch.Generator().manual_seed(cfg.seed)
    shape = (1, model.cfg.latent_channels, LATENT_T, LATENT_F)
    z = torch.randn(shape, generator=generator)
    eps_fn = lambda zt, t: cfg_predict(
        model.denoiser, zt, torch.full((1,), t, dtype=torch.long), cond, null, cfg.cfg_scale
    )
    with torch.no_grad():
        return reverse_diffuse(
            z, strided_timesteps(sched.t_steps, cfg.steps), eps_fn, sched, cfg.mode, generator
        )


def sample(
    x_c: np.ndarray,
    cfg: SamplerConfig,
    model: LdmModel,
    sched: NoiseSchedule | None = None,
) -> MelSpectrogram:
    """Draw one mel spectrogram conditioned on the [T_cond, d] feature rows."""
    z = sample_latent(x_c, cfg, model, sched)
    with torch.no_grad():
        mel = model.autoencoder.decode(model.destandardize(z.squeeze(0)).unsqueeze(0))
    return MelSpectrogram(mel.squeeze(0).numpy().astype(np.float64), hop=HOP_LDM)


def train_autoencoder(
    mels: Sequence[np.ndarray],
    model: LdmModel,
    steps: int | None = None,
    lr: float | None = None,
    batch_size: int = 8,
    seed: int | None = None,
) -> list[float]:
    """Fit the latent autoencoder to the corpus mels; returns the loss curve."""
    cfg = model.cfg
    steps = cfg.ae_steps if steps is None else steps
    lr = cfg.ae_lr if lr is None else lr
    seed = cfg.seed if seed is None else seed
    data = torch.from_numpy(np.stack(mels)).float()
    opt = torch.optim.Adam(model.autoencoder.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    losses = []
    for _ in range(steps):
        idx = rng.integers(0, data.shape[0], size=min(batch_size, data.shape[0]))
        batch = data[idx]
        recon = model.autoencoder.decode(model.autoencoder.encode(batch))
        loss = ((recon - batch) / MEL_SCALE).pow(2).mean()
        if not torch.isfinite(loss):
            raise TrainingDivergedError("autoencoder loss became non-finite")
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
    return losses


def calibrate_latents(model: LdmModel, latents: torch.Tensor) -> torch.Tensor:
    """Set per-channel latent statistics; returns the standardized latents."""
    mean = latents.mean(dim=(0, 2, 3))
    std = latents.std(dim=(0, 2, 3)).clamp_min(1e-6)
    model.z_mean.copy_(mean)
    model.z_std.copy_(std)
    return model.standardize(latents)


def train_denoiser(
    model: LdmModel,
    latents_raw: torch.Tensor,
    conds: torch.Tensor,
    steps: int | None = None,
    log_path: str | Path | None = None,
) -> list[dict]:
    """Train the noise predictor on raw latents with paired condition rows."""
    cfg = model.cfg
    steps = cfg.steps if steps is None else steps
    sched = model.schedule()
    with torch.no_grad():
        latents = calibrate_latents(model, latents_raw)
    params = list(model.denoiser.parameters()) + [model.null_cond]
    opt = torch.optim.Adam(params, lr=cfg.lr)
    generator = torch.Generator().manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    log: list[dict] = []
    fh = open(log_path, "w") if log_path else None
    try:
        for step in range(steps):
            idx = rng.integers(0, latents.shape[0], size=min(cfg.batch_size, latents.shape[0]))
            z0 = latents[idx]
            cond = conds[idx].clone()
            drop = torch.from_numpy(rng.random(len(idx)) < cfg.cond_dropout)
            if drop.any():
                cond[drop] = model.null_cond.to(cond.dtype).expand(cond.shape[1], -1)
            loss = ldm_loss(z0, cond, model.denoiser, sched, generator)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(f"diffusion loss non-finite at step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            if step % cfg.log_every == 0 or step == steps - 1:
                rec = {"step": step, "loss": float(loss.detach())}
                log.append(rec)
                if fh:
                    fh.write(json.dumps(rec) + "\n")
                    fh.flush()
    finally:
        if fh:
            fh.close()
    model.eval()
    return log


def save_ldm_checkpoint(path: str | Path, model: LdmModel) -> None:
    arrays = checkpoints.state_arrays(model)
    checkpoints.save_checkpoint(path, CHECKPOINT_KIND, {"ldm": asdict(model.cfg)}, arrays)


def load_ldm_checkpoint(path: str | Path) -> LdmModel:
    meta, arrays = checkpoints.load_checkpoint(path)
    if meta["kind"] != CHECKPOINT_KIND:
        raise ValueError(f"not a generator checkpoint: {meta['kind']}")
    model = LdmModel(LdmConfig(**meta["config"]["ldm"]))
    checkpoints.load_state_arrays(model, arrays)
    model.eval()
    return model
