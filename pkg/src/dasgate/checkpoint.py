"""Binary checkpoints of named tensors.

Layout (all integers little-endian)::

    b"DASCKPT1"  u32 version  u32 count
    count x [u16 name_len, name (utf-8), u8 dtype, u8 ndim, ndim x u32 dim, payload]
    u64 length of the tensor region in bytes

dtype 0 is float64.  dtype 1 (uint8) carries the JSON-encoded RNG state.
Names are prefixed ``param.``, ``buffer.``, ``momentum.`` or ``meta.``.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

MAGIC = b"DASCKPT1"
VERSION = 1
DTYPES = {0: np.dtype("<f8"), 1: np.dtype("u1")}


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class MissingTensorError(CheckpointError, KeyError):
    pass


@dataclass
class Checkpoint:
    params: Dict[str, np.ndarray] = field(default_factory=dict)
    buffers: Dict[str, np.ndarray] = field(default_factory=dict)
    momentum: Dict[str, np.ndarray] = field(default_factory=dict)
    epoch: int = 0
    rng_state: Optional[dict] = None
    version: int = VERSION


def write_tensors(path, tensors: Dict[str, np.ndarray]) -> None:
    body = bytearray()
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = 1 if arr.dtype == np.uint8 else 0
        arr = np.ascontiguousarray(arr, dtype=DTYPES[code])
        enc = name.encode("utf-8")
        body += struct.pack("<H", len(enc)) + enc
        body += struct.pack("<BB", code, arr.ndim)
        body += struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += arr.tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(tensors)))
        fh.write(body)
        fh.write(struct.pack("<Q", len(body)))


def read_tensors(path) -> Dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 8 and MAGIC.startswith(data):
        raise TruncatedCheckpointError(f"{path}: file ends inside the magic ({len(data)} bytes)")
    if data[:8] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {data[:8]!r}, expected {MAGIC!r}")
    if len(data) < 16:
        raise TruncatedCheckpointError(f"{path}: file ends inside the header")
    version, count = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unknown checkpoint version {version}")
    end = len(data) - 8
    pos = 16

    def take(n):
        nonlocal pos
        if pos + n > end:
            raise TruncatedCheckpointError(f"{path}: truncated at byte {pos} (needed {n} more bytes)")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        code, ndim = struct.unpack("<BB", take(2))
        if code not in DTYPES:
            raise CheckpointError(f"{path}: tensor {name!r} has unknown dtype code {code}")
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        dt = DTYPES[code]
        n_bytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        out[name] = np.frombuffer(take(n_bytes), dtype=dt).reshape(dims).copy()
    if end < 16 or pos != end:
        raise TruncatedCheckpointError(f"{path}: {end - pos} unexpected bytes before the trailer")
    (length,) = struct.unpack_from("<Q", data, end)
    if length != end - 16:
        raise TruncatedCheckpointError(f"{path}: trailer says {length} bytes, found {end - 16}")
    return out


def save_checkpoint(path, net, optimizer=None, epoch: int = 0, rng: Optional[np.random.Generator] = None) -> None:
    tensors = {f"param.{k}": p.value for k, p in net.named_parameters()}
    tensors.update({f"buffer.{k}": b for k, b in net.named_buffers()})
    if optimizer is not None:
        tensors.update({f"momentum.{k}": v for k, v in optimizer.momentum_buffers.items()})
    tensors["meta.epoch"] = np.array([float(epoch)])
    if rng is not None:
        blob = json.dumps(rng.bit_generator.state).encode("utf-8")
        tensors["meta.rng"] = np.frombuffer(blob, dtype=np.uint8)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    write_tensors(path, tensors)


def load_checkpoint(path) -> Checkpoint:
    ckpt = Checkpoint()
    for name, arr in read_tensors(path).items():
        kind, _, key = name.partition(".")
        if kind == "param":
            ckpt.params[key] = arr
        elif kind == "buffer":
            ckpt.buffers[key] = arr
        elif kind == "momentum":
            ckpt.momentum[key] = arr
        elif name == "meta.epoch":
            ckpt.epoch = int(arr[0])
        elif name == "meta.rng":
            ckpt.rng_state = json.loads(arr.tobytes().decode("utf-8"))
    return ckpt


def restore(net, ckpt: Checkpoint, optimizer=None, rng: Optional[np.random.Generator] = None) -> None:
    """Copy checkpoint tensors into ``net`` (and optionally the optimizer)."""
    for name, p in net.named_parameters():
        if name not in ckpt.params:
            raise MissingTensorError(f"checkpoint has no tensor for parameter {name!r}")
        src = ckpt.params[name]
        if src.shape != p.value.shape:
            raise CheckpointError(f"parameter {name!r}: checkpoint shape {src.shape} != model {p.value.shape}")
        p.value[...] = src
    for name, buf in net.named_buffers():
        if name in ckpt.buffers:
            buf[...] = ckpt.buffers[name]
    if optimizer is not None:
        for name in optimizer.momentum_buffers:
            if name in ckpt.momentum:
                optimizer.momentum_buffers[name][...] = ckpt.momentum[name]
    if rng is not None and ckpt.rng_state is not None:
        rng.bit_generator.state = ckpt.rng_state
