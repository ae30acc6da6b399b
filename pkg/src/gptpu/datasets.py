"""Seeded input generators for the application benchmarks."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .errors import InvalidInputError
from .tensor import DEFAULT_SEED


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def uniform_matrix(rows: int, cols: int, lo: float = 0.0, hi: float = 128.0, seed: int = DEFAULT_SEED) -> np.ndarray:
    if not lo < hi:
        raise InvalidInputError(f"empty value range [{lo}, {hi})")
    return _rng(seed).uniform(lo, hi, (rows, cols))


def gemm_inputs(n: int, lo: float = 0.0, hi: float = 128.0, seed: int = DEFAULT_SEED):
    rng = _rng(seed)
    return rng.uniform(lo, hi, (n, n)), rng.uniform(lo, hi, (n, n))


def random_graph(n: int, density: float = 0.05, seed: int = DEFAULT_SEED) -> np.ndarray:
    """0/1 adjacency, ``a[i, j] = 1`` for a link j -> i, no self loops."""
    rng = _rng(seed)
    a = (rng.random((n, n)) < density).astype(np.float64)
    np.fill_diagonal(a, 0.0)
    return a


def hotspot_inputs(n: int, layers: int = 4, lo: float = 320.0, hi: float = 345.0, seed: int = DEFAULT_SEED):
    rng = _rng(seed)
    temp = rng.uniform(lo, hi, (layers, n, n))
    power = rng.uniform(0.0, 0.01, (layers, n, n))
    return temp, power


def unit_lu_integer_matrix(n: int, bandwidth: int = 3, magnitude: int = 2, density: float = 0.5, seed: int = DEFAULT_SEED):
    """``A = L @ U`` with unit-diagonal banded integer factors.

    Every pivot is 1 and every elimination intermediate is a small integer, so
    both factorization and elimination stay on the exact 8-bit integer grid.
    Returns ``(A, L, U)``.
    """
    rng = _rng(seed)

    def band(lower: bool):
        m = np.zeros((n, n))
        for d in range(1, bandwidth + 1):
            vals = rng.integers(-magnitude, magnitude + 1, n - d) * (rng.random(n - d) < density)
            if lower:
                m += np.diag(vals.astype(np.float64), -d)
            else:
                m += np.diag(vals.astype(np.float64), d)
        return m + np.eye(n)

    lo, up = band(True), band(False)
    return lo @ up, lo, up


def gaussian_inputs(n: int, seed: int = DEFAULT_SEED, magnitude: int = 3):
    a, _, _ = unit_lu_integer_matrix(n, seed=seed)
    x = _rng(seed + 1).integers(-magnitude, magnitude + 1, n).astype(np.float64)
    return a, a @ x, x


def backprop_inputs(n: int, samples: int = 8, outputs: int = 1, seed: int = DEFAULT_SEED, lo: float = 0.0, hi: float = 1.0):
    rng = _rng(seed)
    x = rng.uniform(lo, hi, (samples, n))
    y = rng.uniform(0.1, 0.9, (samples, outputs))
    return x, y


def option_batch(n: int, seed: int = DEFAULT_SEED) -> np.ndarray:
    """``n`` option records; calls and puts in roughly equal numbers."""
    rng = _rng(seed)
    spot = rng.uniform(40.0, 120.0, n)
    strike = spot * rng.uniform(0.85, 1.15, n)
    rate = rng.uniform(0.01, 0.08, n)
    vol = rng.uniform(0.2, 0.6, n)
    time = rng.uniform(0.5, 3.0, n)
    kind = rng.integers(0, 2, n).astype(np.float64)
    zeros = np.zeros(n)
    return np.stack([spot, strike, rate, zeros, vol, time, kind, zeros, zeros], axis=1)
