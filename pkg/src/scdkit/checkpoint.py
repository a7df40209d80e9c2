"""Checkpoint serialization: JSON manifest + little-endian float64 blob.

The manifest lists parameter names, shapes and byte offsets in blob order;
round-tripping is bit-exact. Arbitrary JSON metadata (model config, head
type, selector mode, ...) rides along in the manifest.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

MANIFEST_SUFFIX = ".manifest.json"
BLOB_SUFFIX = ".blob"


def save_checkpoint(path_prefix, arrays, metadata=None):
    """Write arrays (name -> ndarray) under path_prefix.{manifest.json,blob}."""
    path_prefix = Path(path_prefix)
    path_prefix.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    chunks = []
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype="<f8")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += len(raw)
        chunks.append(raw)
    blob = b"".join(chunks)
    manifest = {
        "format": "scdkit-checkpoint-v1",
        "dtype": "<f8",
        "total_bytes": offset,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
        "metadata": metadata or {},
        "params": entries,
    }
    with open(str(path_prefix) + MANIFEST_SUFFIX, "w") as f:
        json.dump(manifest, f, indent=1)
    with open(str(path_prefix) + BLOB_SUFFIX, "wb") as f:
        f.write(blob)


def load_checkpoint(path_prefix):
    """Read back (arrays, metadata) written by save_checkpoint."""
    with open(str(path_prefix) + MANIFEST_SUFFIX) as f:
        manifest = json.load(f)
    blob = Path(str(path_prefix) + BLOB_SUFFIX).read_bytes()
    if manifest["total_bytes"] != len(blob):
        raise ValueError("checkpoint blob size does not match manifest")
    if manifest["blob_sha256"] != hashlib.sha256(blob).hexdigest():
        raise ValueError("checkpoint blob digest mismatch")
    arrays = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count,
                            offset=entry["offset"]).reshape(shape)
        arrays[entry["name"]] = arr.copy()
    return arrays, manifest["metadata"]


def checkpoint_digest(path_prefix):
    """Digest over blob + parameter table; stable id for freeze assertions."""
    with open(str(path_prefix) + MANIFEST_SUFFIX) as f:
        manifest = json.load(f)
    h = hashlib.sha256()
    h.update(json.dumps(manifest["params"], sort_keys=True).encode())
    h.update(Path(str(path_prefix) + BLOB_SUFFIX).read_bytes())
    return h.hexdigest()
