"""Binary checkpoints: magic, u32 header length, JSON header, raw little-endian arrays.

The header carries the run config and its architecture hash, the stage and
epoch, the vocabulary and keyword table when present, and a manifest of every
array (name, shape, dtype, byte offset) in body order. Loading checks the
body length against the manifest before touching any model.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .config import Config, ConfigError

MAGIC = b"MAACCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _arrays(model) -> list:
    items = [(name, p.data) for name, p in model.named_parameters()]
    items += sorted(model.buffers().items())
    return items


def checkpoint_bytes(model, cfg: Config, stage: str, epoch: int = 0, vocab=None, keywords=None,
                     extra: dict | None = None) -> bytes:
    manifest, chunks, offset = [], [], 0
    for name, arr in _arrays(model):
        dt = "<f8" if arr.dtype == np.float64 else "<f4"
        raw = np.ascontiguousarray(arr, dtype=dt).tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": dt, "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "stage": stage,
        "epoch": int(epoch),
        "config": asdict(cfg),
        "config_hash": cfg.model_hash(),
        "vocab": list(vocab.tokens) if vocab is not None else None,
        "vocab_hash": vocab.digest() if vocab is not None else None,
        "keywords": list(keywords) if keywords is not None else None,
        "manifest": manifest,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<I", len(blob)) + blob + b"".join(chunks)


def save_checkpoint(model, path, cfg: Config, stage: str, epoch: int = 0, vocab=None, keywords=None,
                    extra: dict | None = None) -> None:
    data = checkpoint_bytes(model, cfg, stage, epoch, vocab, keywords, extra)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def read_checkpoint(path) -> tuple:
    """Parse a checkpoint file into (header, {name: array})."""
    blob = Path(path).read_bytes()
    if len(blob) < 12 or blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<I", blob[8:12])
    if len(blob) < 12 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[12:12 + hlen])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    body = blob[12 + hlen:]
    need = sum(m["nbytes"] for m in header["manifest"])
    if len(body) != need:
        raise CheckpointError(f"{path}: body holds {len(body)} bytes, manifest needs {need} (truncated?)")
    arrays = {}
    for m in header["manifest"]:
        raw = body[m["offset"]:m["offset"] + m["nbytes"]]
        arrays[m["name"]] = np.frombuffer(raw, dtype=m["dtype"]).reshape(m["shape"]).copy()
    return header, arrays


def header_config(header: dict) -> Config:
    try:
        return Config(**header["config"])
    except (TypeError, ConfigError) as exc:
        raise CheckpointError(f"checkpoint config is not loadable: {exc}") from None


def restore(model, arrays: dict, strict: bool = True) -> None:
    """Copy arrays into the model after checking names and shapes."""
    targets = dict(_arrays(model))
    if strict and set(targets) != set(arrays):
        missing = sorted(set(targets) - set(arrays))
        extra = sorted(set(arrays) - set(targets))
        raise CheckpointError(f"manifest mismatch: missing {missing[:4]}, unexpected {extra[:4]}")
    for name, arr in arrays.items():
        if name not in targets:
            continue
        if targets[name].shape != arr.shape:
            raise CheckpointError(f"{name}: checkpoint shape {arr.shape} != model shape {targets[name].shape}")
    for name, arr in arrays.items():
        if name in targets:
            targets[name][...] = arr


def load_checkpoint(path, model=None, expect: Config | None = None, prefix: str | None = None):
    """Read a checkpoint; optionally verify its config hash and restore into ``model``.

    With ``prefix`` only arrays whose names start with it are restored
    (non-strict), e.g. the encoder part of a captioner.
    """
    header, arrays = read_checkpoint(path)
    if expect is not None and header["config_hash"] != expect.model_hash():
        raise CheckpointError(
            f"{path}: config hash {header['config_hash']} does not match the current config {expect.model_hash()}"
        )
    if model is not None:
        if prefix is not None:
            restore(model, {k: v for k, v in arrays.items() if k.startswith(prefix)}, strict=False)
        else:
            restore(model, arrays)
    return header, arrays
