"""Flat binary checkpoint format for named float64 arrays.

Layout (all integers little-endian uint32, payloads little-endian float64):

    magic "NFBK" | version | repeat: name_len | name utf-8 | rank | dims... | payload

No alignment padding, no index: records are read sequentially until EOF.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"NFBK"
VERSION = 1


def save_checkpoint(path, arrays):
    """Write ``{name: array}`` to ``path``. Order follows dict iteration."""
    path = Path(path)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        for name, arr in arrays.items():
            # note np.ascontiguousarray would promote 0-d arrays to 1-d
            arr = np.asarray(arr, dtype=np.float64)
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
            f.write(arr.astype("<f8").tobytes("C"))


def load_checkpoint(path):
    """Read a checkpoint back into ``{name: float64 array}``."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: checkpoint file not found")
    raw = path.read_bytes()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    out = {}
    pos = 8
    n = len(raw)
    while pos < n:
        if pos + 4 > n:
            raise DataError(f"{path}: truncated record header at byte {pos}")
        (name_len,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        if pos + name_len + 4 > n:
            raise DataError(f"{path}: truncated record at byte {pos}")
        name = raw[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        if pos + 4 * rank > n:
            raise DataError(f"{path}: truncated dims for {name!r}")
        dims = struct.unpack_from(f"<{rank}I", raw, pos) if rank else ()
        pos += 4 * rank
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        nbytes = 8 * count
        if pos + nbytes > n:
            raise DataError(f"{path}: truncated payload for {name!r}")
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(dims)
        pos += nbytes
        if name in out:
            raise DataError(f"{path}: duplicate record {name!r}")
        out[name] = arr.astype(np.float64)
    return out
