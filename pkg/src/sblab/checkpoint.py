"""Flat binary checkpoint format for named parameter sets.

Layout: 8-byte magic ``SBLABCK1``, then per parameter: u16 name length,
UTF-8 name, u8 rank, rank * u32 dims, little-endian float32 payload.
Round-trips are bit-exact for float32 data.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .errors import ConfigurationError

MAGIC = b"SBLABCK1"


def save_checkpoint(path, named_arrays) -> None:
    items = named_arrays.items() if hasattr(named_arrays, "items") else named_arrays
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, arr in items:
            arr = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise ConfigurationError(f"parameter name too long: {name!r}")
            if arr.ndim > 0xFF:
                raise ConfigurationError(f"rank {arr.ndim} exceeds format limit")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> "OrderedDict[str, np.ndarray]":
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise ConfigurationError(f"{path}: not a checkpoint file (bad magic)")
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    pos = 8
    while pos < len(blob):
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        dims = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).reshape(dims)
        pos += 4 * count
        out[name] = arr.copy()
    return out
