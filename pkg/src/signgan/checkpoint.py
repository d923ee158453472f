"""Binary container shared by GAN ("GANC") and classifier ("CLFC") checkpoints.

Layout, all integers u32 little-endian::

    magic[4] | version | config_len | config (UTF-8 JSON, sorted keys)
    | tensor_count | tensor_count x (name_len | name | ndim | dims[ndim] | f32 LE data)

Tensors are written in sorted name order so equal contents give equal bytes.
"""
from __future__ import annotations

import json
import math
import struct

import numpy as np

from .errors import BadMagicError, SizeMismatchError, VersionError

VERSION = 1
_U32 = struct.Struct("<I")


def pack(magic, config, tensors):
    out = bytearray(magic)
    out += _U32.pack(VERSION)
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out += _U32.pack(len(blob)) + blob
    out += _U32.pack(len(tensors))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        raw = name.encode("utf-8")
        out += _U32.pack(len(raw)) + raw + _U32.pack(arr.ndim)
        for d in arr.shape:
            out += _U32.pack(d)
        out += arr.tobytes()
    return bytes(out)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise SizeMismatchError(f"container truncated while reading {what} "
                                    f"at byte offset {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what):
        return _U32.unpack(self.take(4, what))[0]


def unpack(data, magic):
    """Inverse of :func:`pack`; returns ``(config, tensors)``."""
    data = bytes(data)
    if len(data) < 4 or data[:4] != magic:
        raise BadMagicError(f"bad checkpoint magic {data[:4]!r}, expected {magic!r}")
    r = _Reader(data)
    r.pos = 4
    version = r.u32("version")
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    try:
        config = json.loads(r.take(r.u32("config length"), "config").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SizeMismatchError(f"corrupt checkpoint config block ({exc})") from None
    tensors = {}
    for _ in range(r.u32("tensor count")):
        name = r.take(r.u32("name length"), "tensor name").decode("utf-8", errors="replace")
        ndim = r.u32("rank")
        if ndim > 8:
            raise SizeMismatchError(f"tensor {name!r} claims rank {ndim}")
        shape = tuple(r.u32("dimension") for _ in range(ndim))
        count = math.prod(shape)
        raw = r.take(4 * count, f"tensor {name!r}")
        tensors[name] = np.frombuffer(raw, "<f4").astype(np.float32).reshape(shape)
    if r.pos != len(data):
        raise SizeMismatchError(f"{len(data) - r.pos} trailing bytes after last tensor")
    return config, tensors


def adam_to_tensors(prefix, state, names):
    out = {}
    for name, m, v in zip(names, state.first_moment, state.second_moment):
        out[f"{prefix}.m.{name}"] = m
        out[f"{prefix}.v.{name}"] = v
    return out


def adam_config(state):
    return {"learning_rate": state.learning_rate, "beta1": state.beta1, "beta2": state.beta2,
            "epsilon": state.epsilon, "step_count": state.step_count}


def adam_from(prefix, cfg, tensors, names):
    from .numcore.optim import AdamState
    state = AdamState(**{k: cfg[k] for k in ("learning_rate", "beta1", "beta2", "epsilon", "step_count")})
    state.first_moment = [tensors[f"{prefix}.m.{n}"].copy() for n in names]
    state.second_moment = [tensors[f"{prefix}.v.{n}"].copy() for n in names]
    return state
