"""``CBNN`` checkpoint files.

Layout (all integers little-endian)::

    b"CBNN"                 magic
    u32                     version (= 1)
    repeated until EOF:
        u16                 name length in bytes
        bytes               UTF-8 name
        u8                  rank
        u64 * rank          dims
        f32 * prod(dims)    row-major payload

Latent full-precision weights are stored; binarization is re-derived on load.
Architecture metadata travels as ordinary records whose names start with
``meta.`` (small integers stored exactly as float32).
"""

import struct

import numpy as np

from .errors import BnnError

MAGIC = b"CBNN"
VERSION = 1


def save_checkpoint(path, records: dict[str, np.ndarray]):
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<I", VERSION))
        for name, arr in records.items():
            arr = np.asarray(arr, dtype="<f4")
            if arr.ndim == 0:
                arr = arr.reshape(1)
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(np.ascontiguousarray(arr).tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise BnnError("bad-checkpoint-magic")
    if len(data) < 8 or struct.unpack_from("<I", data, 4)[0] != VERSION:
        raise BnnError("bad-checkpoint-version")
    records, pos = {}, 8
    try:
        while pos < len(data):
            (n,) = struct.unpack_from("<H", data, pos)
            name = data[pos + 2:pos + 2 + n].decode("utf-8")
            pos += 2 + n
            (rank,) = struct.unpack_from("<B", data, pos)
            dims = struct.unpack_from(f"<{rank}Q", data, pos + 1)
            pos += 1 + 8 * rank
            count = int(np.prod(dims))
            if pos + 4 * count > len(data):
                raise BnnError("truncated-file", name)
            records[name] = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(dims).astype(np.float32)
            pos += 4 * count
    except struct.error as exc:
        raise BnnError("truncated-file", str(exc)) from None
    return records
