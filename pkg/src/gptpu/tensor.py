"""Host-side tensors, range statistics and accuracy metrics.

Everything here works on float64 matrices. Device-visible data lives in
:mod:`gptpu.device` as 8-bit :class:`~gptpu.device.QuantizedBlock` objects.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import DegenerateRangeError, InvalidInputError

DEFAULT_SEED = 42
DEFAULT_MAPE_EPSILON = 1e-9
# whole-tensor scans below this size; sample above it
FULL_SCAN_LIMIT = 1 << 20
DEFAULT_SAMPLE_FRACTION = 0.01


@dataclass(frozen=True)
class TensorShape:
    rows: int
    cols: int

    def __post_init__(self):
        if int(self.rows) < 1 or int(self.cols) < 1:
            raise InvalidInputError(f"shape must be positive, got {self.rows}x{self.cols}")
        object.__setattr__(self, "rows", int(self.rows))
        object.__setattr__(self, "cols", int(self.cols))

    @property
    def size(self) -> int:
        return self.rows * self.cols

    def as_tuple(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def __str__(self):
        return f"{self.rows}x{self.cols}"


class HostTensor:
    """Immutable row-major float64 matrix.

    Vectors are 1xN or Nx1 matrices; rank > 2 is not supported.
    """

    __slots__ = ("_data",)

    def __init__(self, data, shape: Union[TensorShape, tuple, None] = None):
        arr = np.array(data, dtype=np.float64)
        if shape is not None:
            shp = shape if isinstance(shape, TensorShape) else TensorShape(*shape)
            if arr.size != shp.size:
                raise InvalidInputError(
                    f"{arr.size} values do not fill a {shp} tensor"
                )
            arr = arr.reshape(shp.as_tuple())
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim == 0:
            arr = arr.reshape(1, 1)
        if arr.ndim != 2:
            raise InvalidInputError(f"only rank-2 tensors are supported, got rank {arr.ndim}")
        if arr.size == 0:
            raise InvalidInputError("empty tensor")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("tensor contains non-finite values")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        self._data = arr

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "HostTensor":
        return cls(np.zeros((rows, cols)))

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> TensorShape:
        return TensorShape(*self._data.shape)

    def numpy(self) -> np.ndarray:
        """A writable copy of the underlying values."""
        return self._data.copy()

    def __array__(self, dtype=None, copy=None):
        return self._data if dtype is None else self._data.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, HostTensor):
            return NotImplemented
        return self._data.shape == other._data.shape and bool(np.array_equal(self._data, other._data))

    def __hash__(self):
        return hash((self._data.shape, self._data.tobytes()))

    def __repr__(self):
        return f"HostTensor({self.shape}, min={self._data.min():g}, max={self._data.max():g})"


def as_array(t) -> np.ndarray:
    """Coerce a HostTensor or array-like into a read-only 2-D float64 array."""
    if isinstance(t, HostTensor):
        return t.data
    return HostTensor(t).data


@dataclass(frozen=True)
class RangeStats:
    min: float
    max: float
    sampled: bool = False
    # every scanned value is an integer; never set for sampled stats
    integral: bool = False

    def __post_init__(self):
        if not self.min <= self.max:
            raise InvalidInputError(f"range min {self.min} exceeds max {self.max}")

    @property
    def span(self) -> float:
        return self.max - self.min

    def widened(self) -> tuple[float, float]:
        """The range stretched to include zero, so zero padding stays exact."""
        return (min(self.min, 0.0), max(self.max, 0.0))

    @classmethod
    def of(cls, lo: float, hi: float, integral: bool = False) -> "RangeStats":
        return cls(float(lo), float(hi), False, integral)


def range_stats(t, sample_fraction: float = 1.0, seed: int = DEFAULT_SEED) -> RangeStats:
    """Extrema of ``t``, either exact or over a seeded uniform sample."""
    if not 0.0 < sample_fraction <= 1.0:
        raise InvalidInputError(f"sample_fraction must lie in (0, 1], got {sample_fraction}")
    arr = np.asarray(t.data if isinstance(t, HostTensor) else t, dtype=np.float64).ravel()
    if arr.size == 0:
        raise InvalidInputError("range_stats of an empty tensor")
    if sample_fraction >= 1.0:
        lo, hi = float(arr.min()), float(arr.max())
        integral = bool(np.all(arr == np.rint(arr)))
        return RangeStats(lo, hi, False, integral)
    n = max(1, int(round(arr.size * sample_fraction)))
    idx = np.random.default_rng(seed).choice(arr.size, size=n, replace=False)
    sample = arr[idx]
    return RangeStats(float(sample.min()), float(sample.max()), True, False)


def auto_range_stats(t, seed: int = DEFAULT_SEED) -> RangeStats:
    """Full scan for tensors up to 2**20 elements, a 1% sample above that."""
    size = t.data.size if isinstance(t, HostTensor) else np.asarray(t).size
    frac = 1.0 if size <= FULL_SCAN_LIMIT else DEFAULT_SAMPLE_FRACTION
    return range_stats(t, frac, seed)


def _pair(reference, approx) -> tuple[np.ndarray, np.ndarray]:
    ref = np.asarray(as_array(reference), dtype=np.float64)
    app = np.asarray(as_array(approx), dtype=np.float64)
    if ref.shape != app.shape:
        raise InvalidInputError(f"shape mismatch: {ref.shape} vs {app.shape}")
    return ref, app


def mape(reference, approx, epsilon: float = DEFAULT_MAPE_EPSILON) -> float:
    """Mean absolute percentage error as a fraction.

    Reference magnitudes below ``epsilon`` are floored to ``epsilon``.
    """
    ref, app = _pair(reference, approx)
    denom = np.maximum(np.abs(ref), epsilon)
    return float(np.mean(np.abs(app - ref) / denom))


def rmse_normalized(reference, approx) -> float:
    """Root-mean-square error divided by the reference's value range."""
    ref, app = _pair(reference, approx)
    diff = app - ref
    if not np.any(diff):
        return 0.0
    span = float(ref.max() - ref.min())
    if span == 0.0:
        raise DegenerateRangeError("reference is constant but approximation differs")
    return float(np.sqrt(np.mean(diff * diff)) / span)


@dataclass(frozen=True)
class ErrorReport:
    mape: float
    rmse_normalized: float
    max_abs_error: float
    count: int

    def as_dict(self) -> dict:
        return {
            "mape": self.mape,
            "rmse_normalized": self.rmse_normalized,
            "max_abs_error": self.max_abs_error,
            "count": self.count,
        }


def error_report(reference, approx, epsilon: float = DEFAULT_MAPE_EPSILON) -> ErrorReport:
    ref, app = _pair(reference, approx)
    try:
        rmse = rmse_normalized(ref, app)
    except DegenerateRangeError:
        # constant reference: fall back to the reference magnitude
        scale = max(float(np.abs(ref).max()), epsilon)
        rmse = float(np.sqrt(np.mean((app - ref) ** 2)) / scale)
    return ErrorReport(
        mape=mape(ref, app, epsilon),
        rmse_normalized=rmse,
        max_abs_error=float(np.max(np.abs(app - ref))),
        count=int(ref.size),
    )
