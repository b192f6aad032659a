"""Feature extraction for the alignment and generation stages.

The visual side is a two-branch encoder: a space-time conv stack over the
mask-gated video and a second one over the mask track itself (temporal
kernels so mask motion is visible to it); their row-normalized features
are summed and re-normalized. The audio side is a 2-D conv stack over the
mel spectrogram whose temporal stride (16x) makes a 4-second clip come
out at the same 16 rows as the video side. A frame-level semantic
embedder (adapter; the bundled one is a fixed random projection) supplies
per-frame context vectors that are added to the visual features to form
the generator condition.

All backbones use smooth activations and replicate padding, which keeps
constant inputs exactly constant across time rows and keeps every forward
differentiable for gradient checks.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import cv2
import numpy as np
import torch
from torch import nn

from .errors import AdapterUnavailableError, ShapeMismatchError
from .media import LOG_FLOOR, MelSpectrogram, VideoClip
from .segmentation import MaskTrack, mask_video

EPS = 1e-12


@dataclass
class EncoderConfig:
    d: int = 512
    video_channels: int = 32
    mask_channels: int = 16
    audio_channels: int = 32
    n_mels: int = 128
    temporal_stride: int = 1
    spatial_pool: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("feature dimension must be >= 1")
        if self.n_mels % 16 != 0:
            raise ValueError("n_mels must divide by the audio stride (16)")


def l2norm_rows(x, eps: float = EPS):
    """Divide each row by max(||row||, eps); zero rows stay zero."""
    if isinstance(x, np.ndarray):
        n = np.linalg.norm(x, axis=-1, keepdims=True)
        return x / np.maximum(n, eps)
    n = torch.linalg.vector_norm(x, dim=-1, keepdim=True)
    return x / n.clamp_min(eps)


def temporal_mean(x):
    """Arithmetic mean over time rows; no re-normalization."""
    if isinstance(x, np.ndarray):
        return x.mean(axis=-2)
    return x.mean(dim=-2)


def fuse(x_mv, x_m):
    """Row-normalized sum of the two visual branches."""
    if x_mv.shape != x_m.shape:
        raise ShapeMismatchError(f"cannot fuse {x_mv.shape} with {x_m.shape}")
    return l2norm_rows(x_mv + x_m)


def condition_embedding(x_v, x_star):
    """Generator condition: visual features plus per-frame semantic embeddings."""
    if x_v.shape != x_star.shape:
        raise ShapeMismatchError(f"condition shapes differ: {x_v.shape} vs {x_star.shape}")
    return x_v + x_star


class _MlpHead(nn.Module):
    """Final projection block; the only trainable part of a frozen branch."""

    def __init__(self, in_dim: int, d: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(in_dim, in_dim), nn.SiLU(), nn.Linear(in_dim, d))

    def forward(self, x):
        return self.net(x)


class _SpaceTimeBackbone(nn.Module):
    """[B, C, T, H', W'] -> [B, T/stride, width*2*16].

    Inputs arrive already block-pooled by ``spatial_pool`` (see
    video_to_tensor / track_to_tensor); pooling on the uint8 side keeps the
    per-step tensor traffic small. The conv output is summarized on a fixed
    4x4 grid and flattened rather than globally averaged, so coarse object
    position survives into the projection."""

    GRID = 4

    def __init__(self, in_ch: int, width: int, temporal_stride: int):
        super().__init__()
        self.conv1 = nn.Conv3d(
            in_ch, width, (3, 5, 5), stride=(1, 2, 2), padding=(1, 2, 2),
            padding_mode="replicate",
        )
        self.conv2 = nn.Conv3d(
            width, 2 * width, (3, 3, 3), stride=(temporal_stride, 2, 2), padding=(1, 1, 1),
            padding_mode="replicate",
        )
        self.grid_pool = nn.AdaptiveAvgPool3d((None, self.GRID, self.GRID))
        self.act = nn.SiLU()
        self.out_dim = 2 * width * self.GRID * self.GRID

    def forward(self, x):
        x = self.act(self.conv1(x))
        x = self.act(self.conv2(x))
        x = self.grid_pool(x)  # [B, C', T', 4, 4]
        return x.permute(0, 2, 1, 3, 4).flatten(2)


class VisualBranch(nn.Module):
    def __init__(self, in_ch: int, width: int, d: int, temporal_stride: int):
        super().__init__()
        self.backbone = _SpaceTimeBackbone(in_ch, width, temporal_stride)
        self.head = _MlpHead(self.backbone.out_dim, d)

    def forward(self, x):
        return self.head(self.backbone(x))


class MveEncoder(nn.Module):
    """Two-branch visual encoder over (gated video, mask track)."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.video_branch = VisualBranch(3, cfg.video_channels, cfg.d, cfg.temporal_stride)
        self.mask_branch = VisualBranch(1, cfg.mask_channels, cfg.d, cfg.temporal_stride)

    def forward_masked_video(self, masked_video: torch.Tensor) -> torch.Tensor:
        return l2norm_rows(self.video_branch(masked_video))

    def forward_mask(self, masks: torch.Tensor) -> torch.Tensor:
        return l2norm_rows(self.mask_branch(masks))

    def forward(self, masked_video: torch.Tensor, masks: torch.Tensor) -> torch.Tensor:
        return fuse(self.forward_masked_video(masked_video), self.forward_mask(masks))


class AudioEncoder(nn.Module):
    """2-D conv stack over the mel spectrogram; total temporal stride 16.

    The surviving frequency bins are flattened into the projection rather
    than averaged away, so absolute pitch stays visible to the head."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        w = cfg.audio_channels
        self.convs = nn.ModuleList(
            [
                nn.Conv2d(1, w, 3, stride=2, padding=1, padding_mode="replicate"),
                nn.Conv2d(w, w, 3, stride=2, padding=1, padding_mode="replicate"),
                nn.Conv2d(w, 2 * w, 3, stride=2, padding=1, padding_mode="replicate"),
                nn.Conv2d(2 * w, 2 * w, 3, stride=2, padding=1, padding_mode="replicate"),
            ]
        )
        self.act = nn.SiLU()
        self.head = _MlpHead(2 * w * (cfg.n_mels // 16), cfg.d)

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        """mel: [B, T', M] log-magnitude; returns [B, T'/16, d] unit rows."""
        x = (mel - LOG_FLOOR) / abs(LOG_FLOOR)
        x = x.unsqueeze(1)
        for conv in self.convs:
            x = self.act(conv(x))
        x = x.permute(0, 2, 1, 3).flatten(2)  # [B, T'/16, C * M/16]
        return l2norm_rows(self.head(x))


def build_mve_encoder(cfg: EncoderConfig) -> MveEncoder:
    torch.manual_seed(cfg.seed)
    return MveEncoder(cfg)


def build_audio_encoder(cfg: EncoderConfig) -> AudioEncoder:
    torch.manual_seed(cfg.seed + 1)
    return AudioEncoder(cfg)


def _block_pool(x: np.ndarray, pool: int) -> np.ndarray:
    """Average pool x pool blocks over the two spatial axes of [T, H, W, ...];
    trailing rows/cols that do not fill a block are cropped. Integer inputs
    accumulate in uint32 (fast and exact), so the result is deterministic."""
    if pool <= 1:
        return x.astype(np.float32)
    t, h, w = x.shape[:3]
    h2, w2 = h - h % pool, w - w % pool
    x = x[:, :h2, :w2]
    shape = (t, h2 // pool, pool, w2 // pool, pool) + x.shape[3:]
    blocks = x.reshape(shape)
    if np.issubdtype(x.dtype, np.integer):
        summed = blocks.sum(axis=2, dtype=np.uint32).sum(axis=3, dtype=np.uint32)
        return summed.astype(np.float32) / float(pool * pool)
    return blocks.mean(axis=(2, 4), dtype=np.float32)


def video_to_tensor(clip: VideoClip, pool: int = 1, dtype=torch.float32) -> torch.Tensor:
    """[1, 3, T, H/pool, W/pool], scaled to [0, 1]."""
    x = torch.from_numpy(_block_pool(clip.frames, pool)).to(dtype) / 255.0
    return x.permute(3, 0, 1, 2).unsqueeze(0).contiguous()


def track_to_tensor(track: MaskTrack, pool: int = 1, dtype=torch.float32) -> torch.Tensor:
    """[1, 1, T, H/pool, W/pool]; pooling turns bits into block densities."""
    return torch.from_numpy(_block_pool(track.masks, pool)).to(dtype)[None, None]


def mel_to_tensor(mel: MelSpectrogram, dtype=torch.float32) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(mel.values)).to(dtype).unsqueeze(0)


def encode_masked_video(masked_video: VideoClip, encoder: MveEncoder) -> np.ndarray:
    """Features of an already-gated clip. Callers gate first (see mve_features)."""
    with torch.no_grad():
        out = encoder.forward_masked_video(video_to_tensor(masked_video, encoder.cfg.spatial_pool))
    return out.squeeze(0).numpy()


def encode_mask(track: MaskTrack, encoder: MveEncoder) -> np.ndarray:
    with torch.no_grad():
        out = encoder.forward_mask(track_to_tensor(track, encoder.cfg.spatial_pool))
    return out.squeeze(0).numpy()


def mve_features(video: VideoClip, track: MaskTrack, encoder: MveEncoder) -> np.ndarray:
    """Object-level features: gate the clip by the track, encode, fuse."""
    gated = mask_video(video, track)
    return fuse(encode_masked_video(gated, encoder), encode_mask(track, encoder))


def encode_audio(mel: MelSpectrogram, encoder: AudioEncoder) -> np.ndarray:
    with torch.no_grad():
        out = encoder(mel_to_tensor(mel))
    return out.squeeze(0).numpy()


class FrameEmbedder:
    """Adapter interface: per-frame semantic embeddings of gated frames."""

    def embed(self, frames: np.ndarray) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError


class RandomProjectionFrameEmbedder(FrameEmbedder):
    """Fixed random projection of downsampled pixels; reentrant, seed-stable."""

    def __init__(self, d: int = 512, seed: int = 0, patch: int = 16):
        self.d = d
        self.seed = seed
        self.patch = patch
        rng = np.random.default_rng(seed)
        self._proj = rng.standard_normal((patch * patch * 3, d)) / np.sqrt(patch * patch * 3)

    def embed(self, frames: np.ndarray) -> np.ndarray:
        small = np.stack(
            [
                cv2.resize(f, (self.patch, self.patch), interpolation=cv2.INTER_AREA)
                for f in frames
            ]
        )
        flat = small.reshape(len(frames), -1).astype(np.float64) / 255.0
        out = flat @ self._proj
        return l2norm_rows(out)


def frame_semantic_embed(masked_frames: VideoClip, adapter: FrameEmbedder) -> np.ndarray:
    """Per-frame embeddings [T, d] of a mask-gated clip via the adapter."""
    if adapter is None:
        raise AdapterUnavailableError("no frame embedding adapter configured")
    out = adapter.embed(masked_frames.frames)
    if out.shape[0] != masked_frames.t:
        raise ShapeMismatchError("adapter returned wrong number of rows")
    return out


def encoder_config_dict(cfg: EncoderConfig) -> dict:
    return asdict(cfg)
