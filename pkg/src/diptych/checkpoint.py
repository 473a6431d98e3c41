"""Binary checkpoint files for the denoiser and the conditioning adapter.

Layout (all integers little-endian):

    bytes 0..4   magic b"DPTC"
    u16          format version (currently 1)
    u16          payload kind: 1 = denoiser, 2 = conditioning adapter
    u32          config block length
    bytes        config block: UTF-8 JSON
    u32          tensor count
    per tensor, in declaration order:
        u16      name length, then UTF-8 name
        u8       ndim, then ndim x u32 dims
        bytes    float64 little-endian data, C order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CompatibilityError

MAGIC = b"DPTC"
FORMAT_VERSION = 1
KIND_DENOISER = 1
KIND_ADAPTER = 2


def write_checkpoint(path, kind: int, config: dict, tensors: list[tuple[str, np.ndarray]]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<HH", FORMAT_VERSION, kind)
    cfg_bytes = json.dumps(config, sort_keys=True).encode("utf-8")
    blob += struct.pack("<I", len(cfg_bytes))
    blob += cfg_bytes
    blob += struct.pack("<I", len(tensors))
    for name, arr in tensors:
        name_b = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        blob += struct.pack("<H", len(name_b))
        blob += name_b
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.astype("<f8").tobytes(order="C")
    path.write_bytes(bytes(blob))


def read_checkpoint(path) -> tuple[int, dict, list[tuple[str, np.ndarray]]]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CompatibilityError(f"{path}: not a checkpoint file (bad magic)")
    version, kind = struct.unpack_from("<HH", data, 4)
    if version != FORMAT_VERSION:
        raise CompatibilityError(f"{path}: unsupported checkpoint version {version}")
    offset = 8
    (cfg_len,) = struct.unpack_from("<I", data, offset)
    offset += 4
    config = json.loads(data[offset : offset + cfg_len].decode("utf-8"))
    offset += cfg_len
    (count,) = struct.unpack_from("<I", data, offset)
    offset += 4
    tensors = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", data, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", data, offset)
        offset += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=offset).reshape(shape)
        offset += 8 * size
        tensors.append((name, arr.astype(np.float64)))
    return kind, config, tensors
