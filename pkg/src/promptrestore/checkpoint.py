"""Checkpoint files: one JSON manifest line followed by raw float32 blobs.

The manifest carries format version, a config snapshot, the training step,
serialized rng state and a tensor table (name -> shape, byte offset), so a
checkpoint is inspectable with `head -1`. Tensors are stored little-endian
float32 in declared order; round trips are bitwise lossless.
"""

from __future__ import annotations

import json

import numpy as np

FORMAT = "promptrestore-ckpt"
VERSION = 1


class CheckpointError(Exception):
    pass

class CheckpointVersionError(CheckpointError):
    pass

class TruncatedBlobError(CheckpointError):
    pass

class UnknownTensorError(CheckpointError):
    pass


def save_checkpoint(path, tensors: dict, *, kind: str, config: dict,
                    step: int = 0, rng_state=None) -> None:
    table = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        raw = arr.tobytes()
        table.append({"name": name, "shape": list(arr.shape),
                      "dtype": "<f4", "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "kind": kind,
        "config": config,
        "step": int(step),
        "rng": rng_state,
        "tensors": table,
        "blob_bytes": offset,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(manifest).encode("utf-8") + b"\n")
        for raw in blobs:
            f.write(raw)


def load_checkpoint(path):
    """Returns (manifest dict, {name: float32 array})."""
    with open(path, "rb") as f:
        header = f.readline()
        blob = f.read()
    try:
        manifest = json.loads(header.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"unreadable manifest in {path}: {e}") from e
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} file")
    if manifest.get("version") != VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {manifest.get('version')} != supported {VERSION}")
    if len(blob) != manifest["blob_bytes"]:
        raise TruncatedBlobError(
            f"blob has {len(blob)} bytes, manifest declares {manifest['blob_bytes']}")
    tensors = {}
    for entry in manifest["tensors"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(blob):
            raise TruncatedBlobError(f"tensor {entry['name']} extends past blob end")
        arr = np.frombuffer(blob[start:start + nbytes], dtype=entry["dtype"])
        tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return manifest, tensors


def match_tensors(loaded: dict, expected_names) -> None:
    """Raise UnknownTensorError unless name sets agree exactly."""
    loaded_names = set(loaded)
    expected = set(expected_names)
    extra = loaded_names - expected
    missing = expected - loaded_names
    if extra or missing:
        parts = []
        if extra:
            parts.append(f"unknown tensors {sorted(extra)[:5]}")
        if missing:
            parts.append(f"missing tensors {sorted(missing)[:5]}")
        raise UnknownTensorError("; ".join(parts))
