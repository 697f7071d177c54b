"""Checkpoints: a JSON manifest plus one flat little-endian binary.

The manifest lists every array's name, shape, dtype and byte offset, plus a
free-form metadata dict (config, counters, RNG states). Loading reproduces
every array bit-exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MANIFEST = "manifest.json"
DATA = "data.bin"


class CheckpointError(RuntimeError):
    pass


def save(path: str | Path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        blob = arr.tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": arr.dtype.str,
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    manifest = {"meta": meta, "total_bytes": offset, "arrays": entries}
    with open(path / DATA, "wb") as f:
        for blob in blobs:
            f.write(blob)
    with open(path / MANIFEST, "w") as f:
        json.dump(manifest, f, indent=1)
        f.write("\n")


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    try:
        with open(path / MANIFEST) as f:
            manifest = json.load(f)
        raw = (path / DATA).read_bytes()
    except FileNotFoundError as e:
        raise CheckpointError(f"not a checkpoint directory: {path}") from e
    if len(raw) != manifest["total_bytes"]:
        raise CheckpointError(
            f"binary size {len(raw)} does not match manifest ({manifest['total_bytes']})"
        )
    arrays = {}
    for entry in manifest["arrays"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(
            raw, dtype=np.dtype(entry["dtype"]), count=count, offset=entry["offset"]
        )
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return arrays, manifest["meta"]


def validate_shapes(arrays: dict[str, np.ndarray], expected: dict[str, tuple]) -> None:
    """Check loaded arrays against the shapes the current config implies."""
    bad = []
    for name, shape in expected.items():
        if name not in arrays:
            bad.append(f"{name}: missing")
        elif tuple(arrays[name].shape) != tuple(shape):
            bad.append(f"{name}: checkpoint {tuple(arrays[name].shape)} vs config {tuple(shape)}")
    if bad:
        raise CheckpointError("checkpoint/config mismatch: " + "; ".join(bad))
