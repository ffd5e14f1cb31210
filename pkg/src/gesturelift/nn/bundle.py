"""``GDLM`` model bundle: named float32 tensors plus a key/value block.

Layout (little-endian)::

    b"GDLM"  u32 version  u32 n_tensors
    per tensor: u32 name_len, name (utf-8), u8 rank, u32 extent * rank, f32 data
    u32 n_entries
    per entry:  u32 key_len, key (utf-8), u32 value_len, value (utf-8 JSON)
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from gesturelift.binio import Reader
from gesturelift.errors import ParseError

MAGIC = b"GDLM"
VERSION = 1


def encode_bundle(tensors: dict, hparams: dict) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f4")  # tobytes() is always C order
        key = name.encode()
        out.append(struct.pack("<I", len(key)) + key)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    out.append(struct.pack("<I", len(hparams)))
    for key in sorted(hparams):
        k = key.encode()
        v = json.dumps(hparams[key], sort_keys=True).encode()
        out.append(struct.pack("<I", len(k)) + k + struct.pack("<I", len(v)) + v)
    return b"".join(out)


def decode_bundle(data: bytes):
    """Return ``(tensors, hparams)``."""
    r = Reader(data, "bundle")
    if r.take(4, "magic") != MAGIC:
        raise ParseError("bad magic, not a GDLM bundle", 0)
    version, n = r.unpack("<II", "header")
    if version != VERSION:
        raise ParseError(f"unsupported bundle version {version}", 4)
    tensors = {}
    for _ in range(n):
        (ln,) = r.unpack("<I", "tensor name length")
        name = r.take(ln, "tensor name").decode()
        (rank,) = r.unpack("<B", "tensor rank")
        shape = r.unpack(f"<{rank}I", "tensor extents")
        count = int(np.prod(shape, dtype=np.int64))
        raw = r.take(4 * count, f"data of {name}")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    (n_kv,) = r.unpack("<I", "hyperparameter count")
    hparams = {}
    for _ in range(n_kv):
        (lk,) = r.unpack("<I", "key length")
        key = r.take(lk, "key").decode()
        (lv,) = r.unpack("<I", "value length")
        start = r.pos
        try:
            hparams[key] = json.loads(r.take(lv, "value").decode())
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed value for {key!r}", start) from exc
    if r.pos != len(data):
        raise ParseError("trailing bytes after hyperparameter block", r.pos)
    return tensors, hparams


def save_bundle(path, tensors: dict, hparams: dict):
    Path(path).write_bytes(encode_bundle(tensors, hparams))


def load_bundle(path):
    return decode_bundle(Path(path).read_bytes())
