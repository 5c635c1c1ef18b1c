"""Versioned ``.amsdb`` checkpoint container.

Layout (all integers little-endian)::

    magic      8 bytes  b"AMSDBCKP"
    version    u32
    hdr_len    u32
    hdr_crc    u32      CRC-32 of the header bytes
    header     hdr_len bytes of UTF-8 JSON (sorted keys)
    payload    concatenated little-endian float32 arrays

The header holds the model config, seed, step counter, optimizer step and a
table of ``{name, shape, offset, nbytes, crc32}`` entries, one per array.
Offsets are relative to the start of the payload.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from ..errors import CheckpointError
from .io import atomic_write_bytes

MAGIC = b"AMSDBCKP"
VERSION = 1
_PREFIX = struct.Struct("<8sIII")


@dataclass
class Checkpoint:
    config: dict
    params: Dict[str, np.ndarray]
    optimizer: Optional[Dict[str, np.ndarray]] = None  # "m.<name>" / "v.<name>"
    optimizer_step: int = 0
    seed: int = 0
    step: int = 0
    meta: dict = field(default_factory=dict)
    version: int = VERSION

    def arrays(self) -> Dict[str, np.ndarray]:
        out = {f"param.{k}": v for k, v in self.params.items()}
        for k, v in (self.optimizer or {}).items():
            out[f"adam.{k}"] = v
        return out


def to_bytes(ckpt: Checkpoint) -> bytes:
    table, chunks, offset = [], [], 0
    for name, arr in ckpt.arrays().items():
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        table.append({
            "name": name,
            "shape": list(np.shape(arr)),
            "offset": offset,
            "nbytes": len(raw),
            "crc32": zlib.crc32(raw),
        })
        chunks.append(raw)
        offset += len(raw)
    header = {
        "config": ckpt.config,
        "seed": int(ckpt.seed),
        "step": int(ckpt.step),
        "optimizer_step": int(ckpt.optimizer_step),
        "has_optimizer": ckpt.optimizer is not None,
        "meta": ckpt.meta,
        "arrays": table,
    }
    hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, ckpt.version, len(hdr), zlib.crc32(hdr)) + hdr + b"".join(chunks)


def from_bytes(blob: bytes) -> Checkpoint:
    if len(blob) < _PREFIX.size:
        raise CheckpointError("truncated checkpoint: missing header")
    magic, version, hlen, hcrc = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError("not an .amsdb checkpoint (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    start = _PREFIX.size
    hdr = blob[start:start + hlen]
    if len(hdr) != hlen:
        raise CheckpointError("truncated checkpoint: header cut short")
    if zlib.crc32(hdr) != hcrc:
        raise CheckpointError("checksum mismatch in checkpoint header")
    header = json.loads(hdr.decode("utf-8"))
    payload = memoryview(blob)[start + hlen:]
    params, opt = {}, {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4
        if nbytes != entry["nbytes"]:
            raise CheckpointError(f"array {entry['name']}: size field disagrees with shape {shape}")
        lo = entry["offset"]
        raw = bytes(payload[lo:lo + nbytes])
        if len(raw) != nbytes:
            raise CheckpointError(f"truncated payload for array {entry['name']}")
        if zlib.crc32(raw) != entry["crc32"]:
            raise CheckpointError(f"checksum mismatch for array {entry['name']}")
        arr = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(shape)
        kind, _, name = entry["name"].partition(".")
        if kind == "param":
            target = params
        elif kind == "adam":
            target = opt
        else:
            raise CheckpointError(f"unknown array section in {entry['name']!r}")
        if name in target:
            raise CheckpointError(f"array {entry['name']} appears twice")
        target[name] = arr
    return Checkpoint(
        config=header["config"],
        params=params,
        optimizer=opt if header.get("has_optimizer") else None,
        optimizer_step=header.get("optimizer_step", 0),
        seed=header["seed"],
        step=header["step"],
        meta=header.get("meta", {}),
        version=version,
    )


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    atomic_write_bytes(path, to_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return from_bytes(blob)


def load_into(model, params: Dict[str, np.ndarray]) -> None:
    """Copy named arrays into ``model``; every name and shape must match exactly."""
    own = dict(model.named_parameters())
    missing = sorted(set(own) - set(params))
    unknown = sorted(set(params) - set(own))
    if missing:
        raise CheckpointError(f"checkpoint is missing parameters: {', '.join(missing)}")
    if unknown:
        raise CheckpointError(f"checkpoint has unknown parameters: {', '.join(unknown)}")
    for name, tensor in own.items():
        arr = params[name]
        if tuple(arr.shape) != tuple(tensor.shape):
            raise CheckpointError(f"parameter {name}: checkpoint shape {arr.shape} vs model {tensor.shape}")
    for name, tensor in own.items():
        tensor.data = np.array(params[name], dtype=tensor.dtype)
        tensor.grad = None
