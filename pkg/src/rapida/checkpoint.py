"""Binary checkpoints: magic "RAPD", explicit version, named f64 blobs.

Layout (all integers little-endian):

    magic   4 bytes  b"RAPD"
    version u32
    meta    blob     json: config_hash, variant, phase, rng_state
    params  section
    optim   section

Each section is  u32 count,  then per entry:
    u16 name length, name utf-8, u8 ndim, ndim x u64 shape, raw f64 LE data.

load(save(x)) reproduces every array bitwise. A version mismatch is a
refusal, never a silent migration; truncation and garbage are reported with
the byte offset where parsing failed.
"""

from __future__ import annotations

import json
import struct

import numpy as np

FORMAT_VERSION = 1
MAGIC = b"RAPD"


class CheckpointError(ValueError):
    pass


def _pack_section(arrays):
    parts = [struct.pack("<I", len(arrays))]
    for name in arrays:
        data = np.ascontiguousarray(arrays[name], dtype="<f8")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<B", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}Q", *data.shape))
        parts.append(data.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf, path):
        self.buf = buf
        self.off = 0
        self.path = path

    def take(self, n, what):
        if self.off + n > len(self.buf):
            raise CheckpointError(
                f"{self.path}: truncated reading {what} at byte offset {self.off} "
                f"(need {n} bytes, have {len(self.buf) - self.off})")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u16(self, what):
        return struct.unpack("<H", self.take(2, what))[0]

    def u8(self, what):
        return struct.unpack("<B", self.take(1, what))[0]


def _read_section(r, section):
    count = r.u32(f"{section} count")
    out = {}
    for i in range(count):
        nlen = r.u16(f"{section}[{i}] name length")
        name = r.take(nlen, f"{section}[{i}] name").decode("utf-8")
        ndim = r.u8(f"{name} ndim")
        shape = struct.unpack(f"<{ndim}Q", r.take(8 * ndim, f"{name} shape"))
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        raw = r.take(8 * size, f"{name} data")
        out[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return out


def save_checkpoint(path, params, config_hash, variant, phase,
                    optimizer_state=None, rng_state=None, extra_meta=None):
    """params: dict name -> float array. rng_state: numpy bit-generator state."""
    meta = {
        "config_hash": config_hash,
        "variant": variant,
        "phase": int(phase),
        "rng_state": rng_state,
    }
    if extra_meta:
        for key in extra_meta:
            if key in meta:
                raise ValueError(f"extra_meta may not override {key!r}")
        meta.update(extra_meta)
    meta_blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<I", len(meta_blob)))
        f.write(meta_blob)
        f.write(_pack_section(params))
        f.write(_pack_section(optimizer_state or {}))


def load_checkpoint(path):
    """Returns dict: params, optimizer_state, config_hash, variant, phase,
    rng_state."""
    with open(path, "rb") as f:
        buf = f.read()
    r = _Reader(buf, str(path))
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(
            f"{path}: bad magic {magic!r} at byte offset 0 (expected {MAGIC!r})")
    version = r.u32("format version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version} not supported "
            f"(this build reads version {FORMAT_VERSION}; refusing to migrate)")
    meta_len = r.u32("meta length")
    try:
        meta = json.loads(r.take(meta_len, "meta blob").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(
            f"{path}: corrupt meta blob at byte offset 12: {exc}") from exc
    params = _read_section(r, "params")
    optimizer_state = _read_section(r, "optimizer")
    if r.off != len(buf):
        raise CheckpointError(
            f"{path}: {len(buf) - r.off} trailing bytes at offset {r.off}")
    out = dict(meta)
    out["params"] = params
    out["optimizer_state"] = optimizer_state
    out["meta"] = meta
    return out


def generator_state(rng):
    """JSON-safe state of a numpy Generator."""
    state = rng.bit_generator.state
    return json.loads(json.dumps(state))  # ints survive; ensures plain types
