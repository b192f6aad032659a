"""Layered key-value configuration: defaults < file < environment < flags.

Keys are flat dotted names (``media.fps``). The config file is JSON with
the same dotted keys (nested objects are also accepted and flattened).
Environment variables use the ``HYC_`` prefix with dots replaced by
underscores (``HYC_MEDIA_FPS``); ``HYC_HOST``, ``HYC_PORT`` and
``HYC_CKPT_DIR`` are shorthands for the ``service.*`` keys. Unknown keys
are rejected everywhere.
"""
from __future__ import annotations

import json
import os
from typing import Any, Iterable, Mapping

from .errors import ConfigError

DEFAULTS: dict[str, Any] = {
    # media preprocessing
    "media.fps": 4.0,
    "media.side": 224,
    "media.sample_rate": 16000,
    "media.hop_ocav": 250,
    "media.hop_ldm": 256,
    "media.n_mels": 128,
    "media.win": 1024,
    "media.fmin": 0.0,
    "media.fmax": 8000.0,
    "media.griffin_lim_iters": 32,
    # segmentation (toy segmenter + external-adapter parity constants)
    "seg.color_tolerance": 30.0,
    "seg.iou_threshold": 0.88,
    "seg.nms_threshold": 0.8,
    "seg.voting_frames": 15,
    "seg.accept_iou": 0.2,
    # augmentation
    "aug.rvs_ratio": 0.25,
    "aug.mlm_prob": 1.0,
    "aug.seed": 0,
    # encoders
    "enc.d": 512,
    "enc.video_channels": 32,
    "enc.mask_channels": 16,
    "enc.audio_channels": 32,
    "enc.n_mels": 128,
    "enc.temporal_stride": 1,
    "enc.spatial_pool": 4,
    "enc.seed": 0,
    # contrastive fine-tuning
    "ocav.batch_size": 8,
    "ocav.temperature": 0.07,
    "ocav.clip_seconds": 4.0,
    "ocav.lr": 1e-4,
    "ocav.steps": 1000,
    "ocav.seed": 0,
    # latent diffusion
    "ldm.t_steps": 1000,
    "ldm.beta_start": 1e-4,
    "ldm.beta_end": 0.02,
    "ldm.latent_channels": 4,
    "ldm.ae_channels": 16,
    "ldm.denoiser_channels": 32,
    "ldm.time_dim": 64,
    "ldm.cond_dropout": 0.1,
    "ldm.lr": 1e-4,
    "ldm.steps": 1000,
    "ldm.seed": 0,
    # sampler defaults
    "sample.steps": 50,
    "sample.cfg_scale": 4.5,
    "sample.mode": "ancestral",
    # service
    "service.host": "127.0.0.1",
    "service.port": 8352,
    "service.ckpt_dir": "",
    "service.max_upload_mb": 200,
    "service.queue_depth": 8,
}

_ENV_ALIASES = {
    "HYC_HOST": "service.host",
    "HYC_PORT": "service.port",
    "HYC_CKPT_DIR": "service.ckpt_dir",
}


def _coerce(key: str, raw: Any) -> Any:
    """Coerce ``raw`` to the type of the key's default value."""
    default = DEFAULTS[key]
    if isinstance(raw, str) and not isinstance(default, str):
        raw = raw.strip()
        try:
            if isinstance(default, bool):
                return raw.lower() in ("1", "true", "yes", "on")
            if isinstance(default, int):
                return int(raw)
            if isinstance(default, float):
                return float(raw)
        except ValueError as exc:
            raise ConfigError(f"cannot parse {key}={raw!r}") from exc
    if isinstance(default, bool) and not isinstance(raw, bool):
        raise ConfigError(f"cannot parse {key}={raw!r}")
    if isinstance(default, int) and isinstance(raw, float) and not raw.is_integer():
        raise ConfigError(f"{key} expects an integer, got {raw!r}")
    if isinstance(default, int) and isinstance(raw, (int, float)) and not isinstance(raw, bool):
        return int(raw)
    if isinstance(default, float) and isinstance(raw, (int, float)):
        return float(raw)
    if isinstance(default, str):
        return str(raw)
    return raw


def _flatten(obj: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for k, v in obj.items():
        key = f"{prefix}{k}"
        if isinstance(v, Mapping):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


class Config:
    """Immutable view over the layered configuration."""

    def __init__(self, values: Mapping[str, Any] | None = None):
        self._values = dict(DEFAULTS)
        for k, v in (values or {}).items():
            if k not in DEFAULTS:
                raise ConfigError(f"unknown config key: {k}")
            self._values[k] = _coerce(k, v)

    @classmethod
    def load(
        cls,
        path: str | None = None,
        env: Mapping[str, str] | None = None,
        overrides: Iterable[str] | Mapping[str, Any] | None = None,
    ) -> "Config":
        """Build a config from the file < env < flags layering."""
        merged: dict[str, Any] = {}
        if path:
            with open(path) as fh:
                try:
                    data = json.load(fh)
                except json.JSONDecodeError as exc:
                    raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
            if not isinstance(data, dict):
                raise ConfigError(f"config file {path} must hold a JSON object")
            merged.update(_flatten(data))
        env = os.environ if env is None else env
        for name, value in env.items():
            if name in _ENV_ALIASES:
                merged[_ENV_ALIASES[name]] = value
            elif name.startswith("HYC_"):
                key = name[4:].lower().replace("_", ".", 1)
                if key in DEFAULTS:
                    merged[key] = value
        if overrides is not None:
            if isinstance(overrides, Mapping):
                merged.update(overrides)
            else:
                for item in overrides:
                    if "=" not in item:
                        raise ConfigError(f"override must look like key=value, got {item!r}")
                    k, v = item.split("=", 1)
                    merged[k.strip()] = v
        unknown = sorted(k for k in merged if k not in DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(merged)

    def get(self, key: str) -> Any:
        if key not in self._values:
            raise ConfigError(f"unknown config key: {key}")
        return self._values[key]

    def __getitem__(self, key: str) -> Any:
        return self.get(key)

    def section(self, prefix: str) -> dict[str, Any]:
        """All keys under ``prefix.`` with the prefix stripped."""
        pre = prefix + "."
        return {k[len(pre):]: v for k, v in self._values.items() if k.startswith(pre)}

    def as_dict(self) -> dict[str, Any]:
        return dict(self._values)

    def __str__(self) -> str:
        lines = [f"{k} = {self._values[k]!r}" for k in sorted(self._values)]
        return "\n".join(lines)
