"""Parameter checkpoints.

Layout mirrors the MIV grid container: ``b"MIVP\\n"``, a one-line JSON
manifest ``{"config": {...}, "tensors": [{"name", "shape"}, ...], "meta": {...}}``,
a newline, then every tensor as little-endian float32 in manifest order.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model import UNetConfig, UNetParams

CHECKPOINT_MAGIC = b"MIVP\n"
_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


def write_checkpoint(params: UNetParams, path: str | Path, meta: dict | None = None) -> None:
    manifest = {
        "config": params.config.to_dict(),
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in params.items()],
        "meta": meta or {},
    }
    chunks = [np.ascontiguousarray(v, dtype=_F32).tobytes() for v in params.tensors.values()]
    header = json.dumps(manifest, separators=(",", ":"), sort_keys=True).encode("utf-8")
    Path(path).write_bytes(CHECKPOINT_MAGIC + header + b"\n" + b"".join(chunks))


def read_checkpoint(path: str | Path, dtype=np.float32) -> tuple[UNetParams, dict]:
    """Return ``(params, meta)``."""
    blob = Path(path).read_bytes()
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a U-Net checkpoint")
    end = blob.find(b"\n", len(CHECKPOINT_MAGIC))
    if end < 0:
        raise CheckpointError(f"{path}: unterminated manifest")
    try:
        manifest = json.loads(blob[len(CHECKPOINT_MAGIC):end])
        config = UNetConfig(**manifest["config"])
        entries = [(t["name"], tuple(t["shape"])) for t in manifest["tensors"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed manifest ({exc})") from exc
    payload = memoryview(blob)[end + 1:]
    expected = sum(int(np.prod(s)) for _, s in entries) * _F32.itemsize
    if len(payload) != expected:
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    tensors = {}
    offset = 0
    for name, shape in entries:
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype=_F32, count=count, offset=offset).reshape(shape)
        tensors[name] = arr.astype(dtype)
        offset += count * _F32.itemsize
    try:
        params = UNetParams(config, tensors)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    return params, manifest.get("meta", {})
