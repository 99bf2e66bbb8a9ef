"""Binary checkpoints: model parameters, optional Fisher diagonal, metadata.

Layout::

    b"SDACKPT\\0"            8-byte magic
    uint32 LE               format version
    uint64 LE               header length H
    H bytes                 UTF-8 JSON header (sorted keys)
    float64 LE blobs        parameters, then Fisher entries, in header order
    uint64 LE               total blob byte count (truncation guard)
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from sdalab.models import ArchConfig, Model
from sdalab.strategies import FisherDiag
from sdalab.tensor import ParamSet, Tensor

MAGIC = b"SDACKPT\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: Model, fisher: FisherDiag | None = None, metadata: dict | None = None) -> None:
    entries = [(n, t.data) for n, t in model.params.items()]
    header = {
        "arch": model.arch.to_dict(),
        "vocab_size": model.vocab_size,
        "params": [[n, list(a.shape)] for n, a in entries],
        "fisher": None,
        "metadata": metadata or {},
    }
    if fisher is not None:
        header["fisher"] = {"sample_count": fisher.sample_count, "names": [n for n, _ in entries]}
        entries += [(n, fisher.values[n]) for n, _ in list(entries)]
    blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in entries)
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        fh.write(blob)
        fh.write(struct.pack("<Q", len(blob)))


def load_checkpoint(path) -> tuple[Model, FisherDiag | None, dict]:
    """Return ``(model, fisher_or_None, metadata)``; nothing is built on error."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if len(raw) < 20:
        raise CheckpointError(f"{path}: truncated header")
    (version,) = struct.unpack_from("<I", raw, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version} (expected {VERSION})")
    (hlen,) = struct.unpack_from("<Q", raw, 12)
    start = 20 + hlen
    if len(raw) < start + 8:
        raise CheckpointError(f"{path}: truncated")
    try:
        header = json.loads(raw[20:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    (blob_len,) = struct.unpack_from("<Q", raw, len(raw) - 8)
    blob = raw[start:len(raw) - 8]
    if blob_len != len(blob):
        raise CheckpointError(f"{path}: truncated payload ({len(blob)} of {blob_len} bytes)")
    shapes = [(n, tuple(s)) for n, s in header["params"]]
    fisher_hdr = header.get("fisher")
    layout = shapes + (shapes if fisher_hdr else [])
    need = 8 * sum(int(np.prod(s)) for _, s in layout)
    if need != len(blob):
        raise CheckpointError(f"{path}: payload size {len(blob)} does not match header ({need})")
    arrays, off = [], 0
    for _, s in layout:
        n = int(np.prod(s))
        arrays.append(np.frombuffer(blob, dtype="<f8", count=n, offset=off).astype(np.float64).reshape(s))
        off += 8 * n
    arch_d = dict(header["arch"])
    arch = ArchConfig(**arch_d)
    params = ParamSet((n, Tensor(a)) for (n, _), a in zip(shapes, arrays[:len(shapes)]))
    model = Model(arch, int(header["vocab_size"]), params)
    fisher = None
    if fisher_hdr:
        fisher = FisherDiag({n: a for (n, _), a in zip(shapes, arrays[len(shapes):])},
                            int(fisher_hdr["sample_count"]))
    return model, fisher, header.get("metadata", {})
