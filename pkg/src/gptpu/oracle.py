"""Float64 ground truth for every device operation."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidInputError, InvalidShapeError
from .ops import OpDescriptor
from .tensor import HostTensor, as_array


def conv_output_shape(rows: int, cols: int, stride: tuple[int, int]) -> tuple[int, int]:
    return (math.ceil(rows / stride[0]), math.ceil(cols / stride[1]))


def split_kernels(kernel: np.ndarray, kernel_rows=None) -> np.ndarray:
    """View a vertically stacked kernel operand as (channels, rows, cols)."""
    kr = kernel.shape[0] if kernel_rows is None else int(kernel_rows)
    if kr < 1 or kernel.shape[0] % kr:
        raise InvalidShapeError(
            f"kernel operand with {kernel.shape[0]} rows is not a stack of {kr}-row kernels"
        )
    return kernel.reshape(kernel.shape[0] // kr, kr, kernel.shape[1])


def conv2d(a, kernel, stride=(1, 1), kernel_rows=None) -> np.ndarray:
    """Top-left anchored cross-correlation with zero padding.

    ``out[i, j] = sum_{p,q} a[i*sx + p, j*sy + q] * k[p, q]``; reads past the
    input contribute zero. Several kernels stacked vertically produce channel
    blocks laid side by side: channel ``c`` owns output columns
    ``[c*out_cols, (c+1)*out_cols)``.
    """
    a = np.asarray(a, dtype=np.float64)
    ks = split_kernels(np.asarray(kernel, dtype=np.float64), kernel_rows)
    _, lr, lc = ks.shape
    m, n = a.shape
    if lr > m or lc > n:
        raise InvalidShapeError(f"kernel {lr}x{lc} larger than input {m}x{n}")
    sx, sy = stride
    out_r, out_c = conv_output_shape(m, n, stride)
    padded = np.zeros((out_r * sx + lr - 1, out_c * sy + lc - 1))
    padded[:m, :n] = a
    if (sx, sy) == (lr, lc):
        # non-overlapping windows: a pure reshape
        win = padded[: out_r * sx, : out_c * sy].reshape(out_r, lr, out_c, lc).transpose(0, 2, 1, 3)
    else:
        win = sliding_window_view(padded, (lr, lc))[::sx, ::sy][:out_r, :out_c]
    res = np.tensordot(win.reshape(out_r, out_c, lr * lc), ks.reshape(len(ks), lr * lc).T, axes=1)
    # (out_r, out_c, channels) -> channel blocks side by side
    return np.ascontiguousarray(res.transpose(0, 2, 1).reshape(out_r, len(ks) * out_c))


def rotate_kernel(kernel) -> np.ndarray:
    return np.ascontiguousarray(np.rot90(np.asarray(kernel, dtype=np.float64), 2))


def centered_conv2d(a, kernel) -> np.ndarray:
    """The centered, 180-degree rotated convolution variant.

    ``out[i, j] = sum_{p,q=-h..h} a[i+p, j+q] * k[h-p, h-q]`` with ``h = L // 2``
    for an odd LxL kernel, zero padding, same-size output.
    """
    a = np.asarray(a, dtype=np.float64)
    k = np.asarray(kernel, dtype=np.float64)
    if k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
        raise InvalidShapeError("centered convolution needs an odd square kernel")
    h = k.shape[0] // 2
    m, n = a.shape
    out = np.zeros((m, n))
    for p in range(-h, h + 1):
        for q in range(-h, h + 1):
            w = k[h - p, h - q]
            r0, r1 = max(0, -p), min(m, m - p)
            c0, c1 = max(0, -q), min(n, n - q)
            out[r0:r1, c0:c1] += w * a[r0 + p : r1 + p, c0 + q : c1 + q]
    return out


def centered_via_anchored(a, kernel) -> np.ndarray:
    """Express :func:`centered_conv2d` with the device's anchored convolution.

    The host shifts the input down/right by ``h`` and flips the kernel.
    """
    a = np.asarray(a, dtype=np.float64)
    k = np.asarray(kernel, dtype=np.float64)
    h = k.shape[0] // 2
    m, n = a.shape
    shifted = np.zeros((m + h, n + h))
    shifted[h:, h:] = a
    return conv2d(shifted, rotate_kernel(k))[:m, :n]


def fully_connected(vectors, model) -> np.ndarray:
    v = np.asarray(vectors, dtype=np.float64)
    w = np.asarray(model, dtype=np.float64)
    if v.shape[1] != w.shape[0]:
        raise InvalidShapeError(f"inner dimensions differ: {v.shape} x {w.shape}")
    return v @ w


def gemm(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[0]:
        raise InvalidShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def crop(a, window) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    r0, r1, c0, c1 = window
    if not (0 <= r0 < r1 <= a.shape[0] and 0 <= c0 < c1 <= a.shape[1]):
        raise InvalidShapeError(f"crop window {window} outside {a.shape[0]}x{a.shape[1]}")
    return a[r0:r1, c0:c1].copy()


def ext(a, target) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    tr, tc = target
    if tr < a.shape[0] or tc < a.shape[1]:
        raise InvalidShapeError(f"ext target {target} smaller than {a.shape}")
    out = np.zeros((tr, tc))
    out[: a.shape[0], : a.shape[1]] = a
    return out


def _same_shape(a, b):
    if a.shape != b.shape:
        raise InvalidShapeError(f"pairwise operands differ in shape: {a.shape} vs {b.shape}")


def oracle_execute(desc: OpDescriptor, inputs: Sequence) -> HostTensor:
    """Exact float64 result of ``desc`` applied to ``inputs``."""
    if len(inputs) != desc.arity:
        raise InvalidInputError(f"{desc.kind} takes {desc.arity} operand(s), got {len(inputs)}")
    arrs = [as_array(x) for x in inputs]
    k = desc.kind
    if k == "gemm":
        out = gemm(*arrs)
    elif k == "conv2d":
        out = conv2d(arrs[0], arrs[1], desc.stride, desc.kernel_rows)
    elif k == "fully_connected":
        out = fully_connected(*arrs)
    elif k in ("add", "sub", "mul"):
        _same_shape(*arrs)
        a, b = arrs
        out = a + b if k == "add" else a - b if k == "sub" else a * b
    elif k == "mean":
        out = np.array([[arrs[0].mean()]])
    elif k == "max":
        out = np.array([[arrs[0].max()]])
    elif k == "tanh":
        out = np.tanh(arrs[0])
    elif k == "relu":
        out = np.maximum(arrs[0], 0.0)
    elif k == "crop":
        out = crop(arrs[0], desc.window)
    else:
        out = ext(arrs[0], desc.target)
    return HostTensor(out)
