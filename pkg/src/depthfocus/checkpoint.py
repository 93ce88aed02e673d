"""Checkpoints: a JSON manifest plus one raw little-endian float32 blob.

Manifest layout::

    {"format": "depthfocus-checkpoint/1", "blob": "<name>.bin",
     "tensors": [{"name", "shape", "dtype": "<f4", "offset", "length"}, ...],
     "meta": {...}}

``offset`` and ``length`` are in bytes.  Tensors are stored in insertion order.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT = "depthfocus-checkpoint/1"
_DTYPE = np.dtype("<f4")


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> Path:
    """Write ``path`` (manifest) and ``path.with_suffix('.bin')`` (blob)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob_path = path.with_suffix(".bin")
    entries = []
    offset = 0
    with open(blob_path, "wb") as fh:
        for name, arr in tensors.items():
            raw = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
            fh.write(raw)
            entries.append({"name": name, "shape": list(np.shape(arr)), "dtype": _DTYPE.str,
                            "offset": offset, "length": len(raw)})
            offset += len(raw)
    manifest = {"format": FORMAT, "blob": blob_path.name, "tensors": entries, "meta": meta or {}}
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    manifest = json.loads(path.read_text())
    if manifest.get("format") != FORMAT:
        raise ValueError(f"{path}: unknown checkpoint format {manifest.get('format')!r}")
    blob = (path.parent / manifest["blob"]).read_bytes()
    tensors = {}
    for e in manifest["tensors"]:
        end = e["offset"] + e["length"]
        if end > len(blob):
            raise ValueError(f"{path}: tensor {e['name']} runs past the end of the blob")
        arr = np.frombuffer(blob, dtype=np.dtype(e["dtype"]), count=e["length"] // 4, offset=e["offset"])
        tensors[e["name"]] = arr.reshape(e["shape"]).copy()
    return tensors, manifest["meta"]
