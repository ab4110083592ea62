"""Flat binary tensor container with a JSON manifest.

``save_tensors("ckpt", {...})`` writes ``ckpt.bin`` (all tensors back to
back, little-endian) and ``ckpt.json`` describing names, shapes, dtypes and
byte offsets. Extra per-tensor fields (e.g. a weight bound) and a free-form
``meta`` block ride along in the manifest.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np

_KINDS = {"f": "float", "i": "int", "u": "uint", "b": "bool"}


def _paths(prefix: str | Path) -> tuple[Path, Path]:
    prefix = str(prefix)
    if prefix.endswith((".bin", ".json")):
        prefix = prefix.rsplit(".", 1)[0]
    return Path(prefix + ".bin"), Path(prefix + ".json")


def save_tensors(
    prefix: str | Path,
    tensors: Mapping[str, np.ndarray],
    extra: Mapping[str, Mapping[str, Any]] | None = None,
    meta: Mapping[str, Any] | None = None,
) -> None:
    bin_path, json_path = _paths(prefix)
    entries = []
    offset = 0
    with open(bin_path, "wb") as fh:
        for name, arr in tensors.items():
            arr = np.asarray(arr)
            le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            payload = np.ascontiguousarray(le).tobytes()
            fh.write(payload)
            entry = {
                "name": name,
                "shape": list(arr.shape),
                "dtype": _KINDS[arr.dtype.kind],
                "width": arr.dtype.itemsize,
                "byteorder": "little",
                "offset": offset,
                "nbytes": len(payload),
            }
            if extra and name in extra:
                entry.update(extra[name])
            entries.append(entry)
            offset += len(payload)
    manifest = {"format": "ferrosnn-tensors", "version": 1, "tensors": entries,
                "meta": dict(meta or {})}
    json_path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable))


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def load_manifest(prefix: str | Path) -> dict:
    return json.loads(_paths(prefix)[1].read_text())


def load_tensors(prefix: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Return ``(tensors, manifest)``."""
    bin_path, _ = _paths(prefix)
    manifest = load_manifest(prefix)
    raw = bin_path.read_bytes()
    out = {}
    for e in manifest["tensors"]:
        kind = {"float": "f", "int": "i", "uint": "u", "bool": "b"}[e["dtype"]]
        dt = np.dtype(f"<{kind}{e['width']}") if kind != "b" else np.dtype(bool)
        chunk = raw[e["offset"]: e["offset"] + e["nbytes"]]
        if len(chunk) != e["nbytes"]:
            raise ValueError(f"{bin_path}: tensor {e['name']!r} truncated")
        out[e["name"]] = np.frombuffer(chunk, dtype=dt).reshape(e["shape"]).astype(dt.newbyteorder("="))
    return out, manifest
