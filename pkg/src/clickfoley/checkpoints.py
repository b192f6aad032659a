"""Checkpoint container: named weight arrays + a JSON header, in one npz.

The header carries a format version, a `kind` tag and the builder config,
so a checkpoint is self-describing and can be rebuilt without outside
context.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

FORMAT_VERSION = 1


def state_arrays(module: torch.nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def load_state_arrays(module: torch.nn.Module, arrays: dict[str, np.ndarray]) -> None:
    state = {k: torch.from_numpy(np.asarray(v)) for k, v in arrays.items()}
    module.load_state_dict(state)


def save_checkpoint(path: str | Path, kind: str, config: dict, arrays: dict[str, np.ndarray]) -> None:
    meta = {"format_version": FORMAT_VERSION, "kind": kind, "config": config}
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format: {meta.get('format_version')}")
        arrays = {k: data[k] for k in data.files if k != "__meta__"}
    return meta, arrays
