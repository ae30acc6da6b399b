"""GEMM expressed as one strided conv2D.

Each row of ``A`` (M x N) is laid out row-major in an ``s x s`` block with
``s = ceil(sqrt(N))`` and the blocks are stacked vertically into an
``M*s x s`` input. Each column of ``B`` is laid out the same way as one
``s x s`` kernel. A conv2D with stride ``(s, s)`` then visits every row block
exactly once per kernel, and window ``(r, 0)`` under kernel ``c`` is the dot
product ``sum_j A[r, j] * B[j, c]``. Unused block positions hold zeros.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class GemmPlan:
    m: int
    n: int
    k: int

    def __post_init__(self):
        if min(self.m, self.n, self.k) < 1:
            raise InvalidInputError(f"gemm dimensions must be positive: {self.m}x{self.n}x{self.k}")

    @property
    def s(self) -> int:
        return math.isqrt(self.n - 1) + 1 if self.n > 1 else 1

    @property
    def stride(self) -> tuple[int, int]:
        return (self.s, self.s)

    @property
    def input_shape(self) -> tuple[int, int]:
        return (self.m * self.s, self.s)

    @property
    def kernel_stack_shape(self) -> tuple[int, int]:
        return (self.k * self.s, self.s)

    @property
    def kernel_count(self) -> int:
        return self.k


def _blocks(rows: np.ndarray, s: int, fill) -> np.ndarray:
    count, n = rows.shape
    out = np.full((count, s * s), fill, dtype=rows.dtype)
    out[:, :n] = rows
    return out.reshape(count * s, s)


def stack_rows(a, s: int, fill=0) -> np.ndarray:
    """Stacked-row input layout: row ``r`` occupies rows ``[r*s, (r+1)*s)``."""
    a = np.asarray(a)
    return _blocks(a, s, fill)


def column_kernels(b, s: int, fill=0) -> np.ndarray:
    """Kernel stack: column ``c`` of ``b`` becomes kernel ``c``."""
    b = np.asarray(b)
    return _blocks(np.ascontiguousarray(b.T), s, fill)


def gemm_via_conv(a, b, conv=None) -> np.ndarray:
    """Evaluate ``a @ b`` through the strided-convolution construction.

    ``conv(input, kernels, stride, kernel_rows)`` defaults to the float64 oracle.
    """
    from .oracle import conv2d

    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise InvalidInputError(f"gemm shape mismatch: {a.shape} x {b.shape}")
    plan = GemmPlan(a.shape[0], a.shape[1], b.shape[1])
    conv = conv or conv2d
    return conv(stack_rows(a, plan.s), column_kernels(b, plan.s), plan.stride, plan.s)
