"""Version-tagged checkpoint archives.

A checkpoint is a single ``torch.save`` zip archive holding a dict::

    {"format": "bpcodec-checkpoint", "version": 1,
     "codec_config": {...}, "rvq_config": {...},
     "generator": state_dict, "quantizer": state_dict, ...}

Training checkpoints add ``train_config``, ``discriminators``, optimizer
states, RNG states and the step counter. Writes go to a temporary file in
the target directory followed by an atomic rename.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import torch

from .errors import CheckpointVersionError, CorruptionError

FORMAT = "bpcodec-checkpoint"
VERSION = 1


def save_archive(payload: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"format": FORMAT, "version": VERSION, **payload}
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            torch.save(payload, fh)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def load_archive(path) -> dict:
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise CorruptionError(f"{path}: unreadable checkpoint ({exc.__class__.__name__}: {exc})") from exc
    if not isinstance(payload, dict) or payload.get("format") != FORMAT:
        raise CorruptionError(f"{path}: not a codec checkpoint")
    version = payload.get("version")
    if version != VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint format version {version} cannot be loaded by version {VERSION}; "
            "re-export it with a matching release")
    return payload
