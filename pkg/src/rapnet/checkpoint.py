"""Parameter checkpoint file.

Layout: magic "RAPW", version u32, then repeated records of
(name length u16, utf-8 name, rank u8, one u32 per extent, little-endian
float64 payload, row-major). Record order follows the module tree, so a
given model state serializes to identical bytes every time.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"RAPW"
VERSION = 1


def save_checkpoint(path, arrays: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype="<f8")
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_checkpoint(path) -> dict:
    arrays = {}
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        while True:
            head = fh.read(2)
            if not head:
                break
            (name_len,) = struct.unpack("<H", head)
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            count = int(np.prod(shape)) if rank else 1
            payload = fh.read(8 * count)
            if len(payload) != 8 * count:
                raise ValueError(f"{path}: truncated payload for {name}")
            arrays[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
    return arrays
