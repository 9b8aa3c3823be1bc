"""Model persistence: a one-line JSON manifest followed by a flat blob.

File layout: the first line is a JSON manifest (format version, model config,
seed, parameter names/shapes/byte offsets, dtype); everything after the
newline is the concatenation of all parameter arrays as little-endian 32-bit
floats. Round-trips are bit-exact. Writes go through a temp file and an
atomic rename.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError
from .models import ModelConfig, RulTransformer

FORMAT_VERSION = 1
_DTYPE = np.dtype("<f4")


class CheckpointError(DataError):
    """Unreadable, truncated, or mismatched checkpoint."""


def save_checkpoint(model: RulTransformer, path: str | Path,
                    extra: Optional[dict] = None) -> None:
    path = Path(path)
    params = model.parameters()
    entries = []
    offset = 0
    blobs = []
    for p in params:
        data = np.ascontiguousarray(p.data, dtype=_DTYPE)
        blobs.append(data.tobytes())
        entries.append({"name": p.name, "shape": list(p.data.shape), "offset": offset})
        offset += data.nbytes
    manifest = {
        "format": "rulkit-checkpoint",
        "format_version": FORMAT_VERSION,
        "dtype": str(_DTYPE),
        "config": model.config.to_dict(),
        "seed": model.seed,
        "params": entries,
        "blob_bytes": offset,
    }
    if extra:
        manifest["extra"] = extra
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(manifest, separators=(",", ":"), sort_keys=True).encode())
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def read_manifest(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        line = fh.readline()
    try:
        manifest = json.loads(line)
    except json.JSONDecodeError:
        raise CheckpointError(f"{path}: first line is not a JSON manifest") from None
    if manifest.get("format") != "rulkit-checkpoint":
        raise CheckpointError(f"{path}: not a rulkit checkpoint")
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version} unsupported (expected {FORMAT_VERSION})"
        )
    return manifest


def _read_blob(path: Path, manifest: dict) -> bytes:
    with open(path, "rb") as fh:
        fh.readline()
        blob = fh.read()
    expected = manifest["blob_bytes"]
    if len(blob) != expected:
        raise CheckpointError(f"{path}: blob is {len(blob)} bytes, manifest says {expected}")
    return blob


def _fill_params(model: RulTransformer, manifest: dict, blob: bytes, path: Path) -> None:
    by_name = model.param_dict()
    manifest_names = [e["name"] for e in manifest["params"]]
    if sorted(manifest_names) != sorted(by_name):
        missing = sorted(set(by_name) - set(manifest_names))
        surplus = sorted(set(manifest_names) - set(by_name))
        raise CheckpointError(
            f"{path}: parameter set mismatch (missing {missing[:3]}, unexpected {surplus[:3]})"
        )
    for entry in manifest["params"]:
        param = by_name[entry["name"]]
        shape = tuple(entry["shape"])
        if shape != param.data.shape:
            raise CheckpointError(
                f"{path}: parameter {entry['name']} has shape {shape}, "
                f"model expects {param.data.shape}"
            )
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = entry["offset"]
        end = start + count * _DTYPE.itemsize
        if end > len(blob):
            raise CheckpointError(f"{path}: parameter {entry['name']} runs past end of blob")
        param.data = np.frombuffer(blob[start:end], dtype=_DTYPE).reshape(shape).copy()


def load_checkpoint(path: str | Path) -> RulTransformer:
    """Reconstruct the model (config, seed, parameters) from a checkpoint."""
    path = Path(path)
    manifest = read_manifest(path)
    try:
        config = ModelConfig.from_dict(manifest["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad config in manifest ({exc})") from None
    model = RulTransformer(config, seed=manifest.get("seed", 0))
    _fill_params(model, manifest, _read_blob(path, manifest), path)
    return model


def restore_into(model: RulTransformer, path: str | Path) -> None:
    """Load parameters into an existing model; configs must match exactly."""
    path = Path(path)
    manifest = read_manifest(path)
    stored = manifest["config"]
    current = model.config.to_dict()
    if stored != current:
        diff = {k: (stored.get(k), current.get(k))
                for k in set(stored) | set(current) if stored.get(k) != current.get(k)}
        raise CheckpointError(f"{path}: config mismatch {diff}")
    _fill_params(model, manifest, _read_blob(path, manifest), path)
