"""Regenerate the golden model-blob fixtures under tests/fixtures.

The blocks are deterministic functions of their indices, so the fixtures can
be rebuilt byte for byte. Tests compare fresh encodings against these files.
"""

import gzip
from pathlib import Path

import numpy as np

from gptpu.codec import encode
from gptpu.device import QuantizedBlock

OUT = Path(__file__).resolve().parent.parent / "tests" / "fixtures"


def pattern(rows: int, cols: int) -> np.ndarray:
    i, j = np.indices((rows, cols))
    return ((i * 31 + j * 17) % 256).astype(np.uint8)


BLOCKS = {
    "scalar_1x1.bin": (QuantizedBlock(np.array([[7]], dtype=np.uint8), 1.0, 0), "fully_connected"),
    "padded_130x5.bin": (QuantizedBlock(pattern(130, 5), 2.5, 128), "conv2d"),
}


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for name, (block, kind) in BLOCKS.items():
        (OUT / name).write_bytes(encode(block, kind))
    big = encode(QuantizedBlock(pattern(2048, 2048), 0.5, 0), "fully_connected")
    (OUT / "pattern_2048x2048.bin.gz").write_bytes(gzip.compress(big, compresslevel=9, mtime=0))


if __name__ == "__main__":
    main()
