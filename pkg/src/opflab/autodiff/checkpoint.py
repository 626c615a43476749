"""Parameter checkpoints.

A checkpoint is two files. ``<stem>.bin`` concatenates the blocks as
little-endian float64 in manifest order. ``<stem>.json`` lists each block's
name, shape, offset and count, any caller metadata, and the SHA-256 of the
binary payload.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint"]

FORMAT = "opflab-checkpoint"
VERSION = "1.0.0"


class CheckpointError(ValueError):
    pass


def _paths(path):
    p = Path(path)
    stem = p.with_suffix("") if p.suffix in (".bin", ".json") else p
    return stem.with_name(stem.name + ".bin"), stem.with_name(stem.name + ".json")


def save_checkpoint(path, blocks: dict, meta: dict | None = None):
    """Write named arrays; returns (binary path, manifest path)."""
    bin_path, man_path = _paths(path)
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for name, arr in blocks.items():
        a = np.asarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "count": int(a.size)})
        chunks.append(a.tobytes())
        offset += a.size
    payload = b"".join(chunks)
    bin_path.write_bytes(payload)
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "blocks": entries,
        "meta": meta or {},
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    man_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return bin_path, man_path


def load_checkpoint(path):
    """Read a checkpoint; returns ({name: array}, meta)."""
    bin_path, man_path = _paths(path)
    try:
        manifest = json.loads(man_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CheckpointError(f"missing checkpoint manifest {man_path}") from None
    if manifest.get("format") != FORMAT or str(manifest.get("version", "")).split(".")[0] != VERSION.split(".")[0]:
        raise CheckpointError(f"{man_path} is not a compatible checkpoint manifest")
    payload = bin_path.read_bytes()
    if hashlib.sha256(payload).hexdigest() != manifest["sha256"]:
        raise CheckpointError(f"checksum mismatch in {bin_path}")
    flat = np.frombuffer(payload, dtype="<f8")
    blocks = {}
    for e in manifest["blocks"]:
        a = flat[e["offset"] : e["offset"] + e["count"]]
        if a.size != e["count"]:
            raise CheckpointError(f"block {e['name']!r} is truncated")
        blocks[e["name"]] = a.astype(np.float64).reshape(e["shape"])
    return blocks, manifest["meta"]
