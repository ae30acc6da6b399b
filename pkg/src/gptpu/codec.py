"""Byte-exact model blob encoder and decoder.

Layout, all integers little-endian::

    [0, 120)         header; bytes 116..119 hold the data-section size (u32)
    [120, 120+D)     data section, row-major 8-bit codes, padded to 128x128 multiples
    +12              metadata: padded rows (u32), padded cols (u32), scale (f32)
    +24              extension: b"LSHP", logical rows (u32), logical cols (u32),
                     zero point (u8), 3 pad bytes, scale (f64)

Header bytes 0..115 carry a fixed magic, a format version and the instruction
kind. The format is self-describing for this package only; it is not
compatible with vendor-compiled model files.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .device import QuantizedBlock
from .errors import InvalidInputError, MalformedBlobError
from .ops import DEVICE_KINDS

HEADER_SIZE = 120
PAD_UNIT = 128
MAGIC = b"GPTPUEMU"
VERSION = 1
META = struct.Struct("<IIf")
EXT_TAG = b"LSHP"
EXT = struct.Struct("<4sIIB3xd")


@dataclass(frozen=True)
class BlobInfo:
    kind: str
    version: int
    data_size: int
    padded_rows: int
    padded_cols: int
    logical_rows: int
    logical_cols: int
    scale_f32: float
    scale: float
    zero_point: int
    checksum: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def padded_dims(rows: int, cols: int, unit: int = PAD_UNIT) -> tuple[int, int]:
    return (math.ceil(rows / unit) * unit, math.ceil(cols / unit) * unit)


def _header(kind: str, data_size: int) -> bytes:
    head = bytearray(HEADER_SIZE)
    head[0:8] = MAGIC
    struct.pack_into("<II", head, 8, VERSION, DEVICE_KINDS.index(kind))
    struct.pack_into("<I", head, HEADER_SIZE - 4, data_size)
    return bytes(head)


def encode(block: QuantizedBlock, kind: str = "fully_connected") -> bytes:
    if kind not in DEVICE_KINDS:
        raise InvalidInputError(f"unknown instruction kind {kind!r}")
    rows, cols = block.values.shape
    pr, pc = padded_dims(rows, cols)
    if (pr, pc) == (rows, cols):
        data = block.values.tobytes()
    else:
        # pad with the zero point so padding dequantizes to exactly zero
        buf = np.full((pr, pc), block.zero_point, dtype=np.uint8)
        buf[:rows, :cols] = block.values
        data = buf.tobytes()
    return b"".join(
        (
            _header(kind, len(data)),
            data,
            META.pack(pr, pc, block.scale),
            EXT.pack(EXT_TAG, rows, cols, block.zero_point, block.scale),
        )
    )


def decode_with_info(blob: bytes) -> tuple[QuantizedBlock, BlobInfo]:
    blob = bytes(blob)
    if len(blob) < HEADER_SIZE:
        raise MalformedBlobError(f"blob of {len(blob)} bytes is shorter than the {HEADER_SIZE}-byte header")
    if blob[:8] != MAGIC:
        raise MalformedBlobError("bad magic")
    version, kind_code = struct.unpack_from("<II", blob, 8)
    if kind_code >= len(DEVICE_KINDS):
        raise MalformedBlobError(f"unknown kind code {kind_code}")
    (size,) = struct.unpack_from("<I", blob, HEADER_SIZE - 4)
    tail = len(blob) - HEADER_SIZE - size
    if tail not in (META.size, META.size + EXT.size):
        raise MalformedBlobError(
            f"size field says {size} data bytes but the blob holds "
            f"{len(blob) - HEADER_SIZE} bytes after the header"
        )
    data = blob[HEADER_SIZE : HEADER_SIZE + size]
    rows, cols, scale32 = META.unpack_from(blob, HEADER_SIZE + size)
    if rows * cols != size:
        raise MalformedBlobError(f"metadata {rows}x{cols} does not match {size} data bytes")
    lrows, lcols, zp, scale = rows, cols, 0, float(scale32)
    if tail == META.size + EXT.size:
        tag, lrows, lcols, zp, scale = EXT.unpack_from(blob, HEADER_SIZE + size + META.size)
        if tag != EXT_TAG or not (1 <= lrows <= rows and 1 <= lcols <= cols):
            raise MalformedBlobError("corrupt logical-shape extension")
    if not (scale > 0 and math.isfinite(scale)) or not scale32 > 0:
        raise MalformedBlobError(f"non-positive scale {scale}")
    if size == 0:
        raise MalformedBlobError("empty data section")
    codes = np.frombuffer(data, dtype=np.uint8).reshape(rows, cols)[:lrows, :lcols]
    block = QuantizedBlock(codes.copy(), scale, zp)
    info = BlobInfo(
        kind=DEVICE_KINDS[kind_code],
        version=version,
        data_size=size,
        padded_rows=rows,
        padded_cols=cols,
        logical_rows=lrows,
        logical_cols=lcols,
        scale_f32=float(scale32),
        scale=scale,
        zero_point=zp,
        checksum=zlib.crc32(data),
    )
    return block, info


def decode(blob: bytes) -> QuantizedBlock:
    return decode_with_info(blob)[0]


def write_blob(path, block: QuantizedBlock, kind: str = "fully_connected") -> Path:
    path = Path(path)
    path.write_bytes(encode(block, kind))
    return path


def read_blob(path) -> tuple[QuantizedBlock, BlobInfo]:
    return decode_with_info(Path(path).read_bytes())
