"""Named-tensor checkpoint container (AGFK format).

Layout, all integers little-endian:

    magic   4 bytes  b"AGFK"
    version u32      currently 1
    count   u32      number of tensors
    per tensor (sorted by name on write):
      name_len u16, name UTF-8, dtype u8 (0 = float64 little-endian),
      rank u8, dims u32 * rank, payload raw C-order values

Round-trips are bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import CheckpointFormatError

MAGIC = b"AGFK"
VERSION = 1
DTYPE_F64 = 0


def save_checkpoint(path, state: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(state))]
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f8")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise CheckpointFormatError(f"tensor name too long: {name[:40]}...")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", DTYPE_F64, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()

    def need(offset: int, count: int, what: str) -> None:
        if offset + count > len(blob):
            raise CheckpointFormatError(
                f"truncated checkpoint: need {count} bytes for {what} at offset {offset}")

    need(0, 4, "magic")
    if blob[:4] != MAGIC:
        raise CheckpointFormatError(f"bad magic {blob[:4]!r} at offset 0")
    need(4, 8, "header")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported version {version} at offset 4")
    off = 12
    state: dict[str, np.ndarray] = {}
    for _ in range(count):
        need(off, 2, "name length")
        (name_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        need(off, name_len, "name")
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        need(off, 2, "dtype/rank")
        dtype_code, rank = struct.unpack_from("<BB", blob, off)
        off += 2
        if dtype_code != DTYPE_F64:
            raise CheckpointFormatError(f"unknown dtype code {dtype_code} at offset {off - 2}")
        need(off, 4 * rank, "dims")
        dims = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        nbytes = 8 * int(np.prod(dims, dtype=np.int64)) if rank else 8
        need(off, nbytes, f"payload of {name}")
        arr = np.frombuffer(blob[off:off + nbytes], dtype="<f8").reshape(dims)
        off += nbytes
        state[name] = arr.astype(np.float64)
    if off != len(blob):
        raise CheckpointFormatError(f"trailing garbage at offset {off}")
    return state
