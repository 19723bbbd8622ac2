"""Binary checkpoints.

Layout::

    b"SLK1" | uint64 LE manifest length | UTF-8 JSON manifest | f64 LE payload

The manifest lists every tensor by name with its shape and byte offset into
the payload, plus free-form ``meta`` (config, vocabularies, statistics).
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from typing import Dict, Mapping, Tuple

import numpy as np
import torch

MAGIC = b"SLK1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def write_checkpoint(path, tensors: Mapping[str, torch.Tensor | np.ndarray],
                     meta: dict | None = None) -> None:
    entries, chunks, offset = [], [], 0
    for name in tensors:
        arr = np.ascontiguousarray(_as_numpy(tensors[name]), dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        raw = arr.tobytes()
        chunks.append(raw)
        offset += len(raw)
    manifest = json.dumps({"version": VERSION, "tensors": entries, "meta": meta or {},
                           "payload_bytes": offset}, sort_keys=True).encode("utf-8")
    blob = MAGIC + struct.pack("<Q", len(manifest)) + manifest + b"".join(chunks)
    atomic_write_bytes(path, blob)


def read_checkpoint(path) -> Tuple[Dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 12:
        raise CheckpointError(f"{path}: truncated header")
    (mlen,) = struct.unpack("<Q", blob[4:12])
    if len(blob) < 12 + mlen:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(blob[12:12 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable manifest ({exc})") from exc
    if manifest.get("version") != VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {manifest.get('version')} != supported {VERSION}")
    payload = blob[12 + mlen:]
    if len(payload) != manifest["payload_bytes"]:
        raise CheckpointError(
            f"{path}: payload has {len(payload)} bytes, manifest says {manifest['payload_bytes']}")
    tensors = {}
    for entry in manifest["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        raw = payload[start:start + 8 * count]
        if len(raw) != 8 * count:
            raise CheckpointError(f"{path}: tensor {entry['name']} runs past the payload")
        tensors[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).copy()
    return tensors, manifest["meta"]


def save_params(module: torch.nn.Module, path, meta: dict | None = None,
                extra: Mapping[str, torch.Tensor] | None = None) -> None:
    tensors = {name: p for name, p in module.named_parameters()}
    for name, buf in module.named_buffers():
        tensors[name] = buf
    if extra:
        tensors.update(extra)
    write_checkpoint(path, tensors, meta)


def load_params(module: torch.nn.Module, tensors: Mapping[str, np.ndarray]) -> None:
    """Copy named tensors into ``module``; all-or-nothing.

    Raises CheckpointError listing every missing, unexpected or misshapen
    name before touching any parameter.
    """
    targets = dict(module.named_parameters())
    targets.update(dict(module.named_buffers()))
    missing = sorted(set(targets) - set(tensors))
    extra = sorted(set(tensors) - set(targets))
    bad_shape = sorted(n for n in set(targets) & set(tensors)
                       if tuple(targets[n].shape) != tuple(tensors[n].shape))
    if missing or extra or bad_shape:
        parts = []
        if missing:
            parts.append("missing: " + ", ".join(missing))
        if extra:
            parts.append("unexpected: " + ", ".join(extra))
        if bad_shape:
            parts.append("shape mismatch: " + ", ".join(bad_shape))
        raise CheckpointError("; ".join(parts))
    with torch.no_grad():
        for name, t in targets.items():
            t.copy_(torch.from_numpy(np.asarray(tensors[name])))


def _as_numpy(t) -> np.ndarray:
    if isinstance(t, torch.Tensor):
        return t.detach().cpu().numpy()
    return np.asarray(t)


def atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
