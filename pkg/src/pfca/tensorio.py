"""Raw tensor fixture files.

Layout: magic ``TNSR``, version u16 LE (1), rank u8, dims u32 LE each,
then float32 LE payload in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TNSR"
VERSION = 1


def encode_tensor(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    header = MAGIC + struct.pack("<HB", VERSION, array.ndim) + struct.pack(f"<{array.ndim}I", *array.shape)
    return header + np.ascontiguousarray(array, dtype="<f4").tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if buf[:4] != MAGIC:
        raise ValueError("not a TNSR file (bad magic)")
    version, rank = struct.unpack_from("<HB", buf, 4)
    if version != VERSION:
        raise ValueError(f"unsupported TNSR version {version}")
    dims = struct.unpack_from(f"<{rank}I", buf, 7)
    start = 7 + 4 * rank
    count = int(np.prod(dims)) if rank else 1
    payload = buf[start:]
    if len(payload) != 4 * count:
        raise ValueError(f"TNSR payload has {len(payload)} bytes, expected {4 * count}")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)


def save_tensor(path: str | Path, array: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(array))


def load_tensor(path: str | Path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())
