from __future__ import annotations

from contextlib import contextmanager
from typing import Optional

import numpy as np

from ..errors import InvalidInputError, SingularMatrixError, TaskFailedError
from ..runtime import Runtime


@contextmanager
def runtime_scope(runtime: Optional[Runtime] = None):
    """Yield ``runtime``, or a private single-device one closed on exit."""
    if runtime is not None:
        yield runtime
        return
    rt = Runtime()
    try:
        yield rt
    finally:
        rt.close()


def _wait(rt: Runtime, h) -> None:
    # numerical failures inside a kernel task surface as themselves
    try:
        rt.wait(h)
    except TaskFailedError as exc:
        if isinstance(exc.__cause__, SingularMatrixError):
            raise exc.__cause__ from None
        raise


def run_task(rt: Runtime, fn, *args):
    """Enqueue ``fn`` as one task, wait for it, and return its result."""
    h = rt.enqueue(fn, *args)
    _wait(rt, h)
    return h.result


def run_tasks(rt: Runtime, fn, arg_lists) -> list:
    """Enqueue one task per argument tuple, then wait for all of them in order.

    Tasks enqueued together may run concurrently; each task forms its own
    affinity groups, so independent chunks spread over the devices.
    """
    handles = [rt.enqueue(fn, *args) for args in arg_lists]
    for h in handles:
        _wait(rt, h)
    return [h.result for h in handles]


def row_bands(rows: int, band: int) -> list[tuple[int, int]]:
    return [(r, min(r + band, rows)) for r in range(0, rows, band)]


def as_matrix(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise InvalidInputError(f"{name} must be a non-empty matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return a


def as_square(x, name: str) -> np.ndarray:
    a = as_matrix(x, name)
    if a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"{name} must be square, got {a.shape}")
    return a
