"""Versioned binary checkpoint container.

Layout (all integers little-endian u32):

    magic "FLWM" | version | meta_count | meta_count u32 values |
    sections until EOF, each:
        name_len | name bytes (utf-8) | rank | rank dims | float64 payload (row-major)

The first metadata value is a model kind tag (1 = bond denoiser, 2 = spectrum
encoder); the rest are the architecture integers needed to rebuild the module.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import BadMagic, TruncatedFile, VersionMismatch

MAGIC = b"FLWM"
VERSION = 1

KIND_DENOISER = 1
KIND_ENCODER = 2


def save_container(path, kind: int, meta: list[int], arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as handle:
        handle.write(MAGIC)
        handle.write(struct.pack("<I", VERSION))
        values = [kind, *meta]
        handle.write(struct.pack("<I", len(values)))
        handle.write(struct.pack(f"<{len(values)}I", *values))
        for name, array in arrays.items():
            data = np.ascontiguousarray(array, dtype="<f8")
            encoded = name.encode("utf-8")
            handle.write(struct.pack("<I", len(encoded)))
            handle.write(encoded)
            handle.write(struct.pack("<I", data.ndim))
            handle.write(struct.pack(f"<{data.ndim}I", *data.shape))
            handle.write(data.tobytes())


def _read_exact(handle, count: int) -> bytes:
    data = handle.read(count)
    if len(data) != count:
        raise TruncatedFile("checkpoint ended mid-record")
    return data


def load_container(path) -> tuple[int, list[int], dict[str, np.ndarray]]:
    with open(path, "rb") as handle:
        magic = handle.read(4)
        if magic != MAGIC:
            raise BadMagic(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(handle, 4))
        if version != VERSION:
            raise VersionMismatch(f"unsupported checkpoint version {version}")
        (meta_count,) = struct.unpack("<I", _read_exact(handle, 4))
        values = list(struct.unpack(f"<{meta_count}I", _read_exact(handle, 4 * meta_count)))
        if not values:
            raise TruncatedFile("checkpoint missing model kind")
        kind, meta = values[0], values[1:]
        arrays: dict[str, np.ndarray] = {}
        while True:
            head = handle.read(4)
            if not head:
                break
            if len(head) != 4:
                raise TruncatedFile("checkpoint ended mid-record")
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(handle, name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(handle, 4))
            shape = struct.unpack(f"<{rank}I", _read_exact(handle, 4 * rank))
            size = int(np.prod(shape, dtype=np.int64)) if rank else 1
            payload = _read_exact(handle, 8 * size)
            arrays[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    return kind, meta, arrays
