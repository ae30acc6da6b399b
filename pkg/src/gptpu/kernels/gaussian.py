"""Gaussian elimination without pivoting.

Every row reduction ``row_i -= f_i * row_k`` computes its products with one
device ``mul`` over the whole trailing block; subtraction and back
substitution run on the host.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..errors import InvalidInputError, SingularMatrixError
from ..runtime import Runtime
from ._common import as_square, run_task, runtime_scope


def back_substitute(upper: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    n = upper.shape[0]
    x = np.zeros(n)
    for i in range(n - 1, -1, -1):
        if upper[i, i] == 0.0:
            raise SingularMatrixError(f"zero pivot at row {i}")
        x[i] = (rhs[i] - upper[i, i + 1 :] @ x[i + 1 :]) / upper[i, i]
    return x


def gaussian(a, b, runtime: Optional[Runtime] = None) -> np.ndarray:
    """Solve ``a x = b``."""
    a = as_square(a, "A")
    n = a.shape[0]
    rhs = np.asarray(b, dtype=np.float64).reshape(-1)
    if rhs.shape[0] != n:
        raise InvalidInputError(f"right-hand side has {rhs.shape[0]} entries, expected {n}")
    aug = np.hstack([a, rhs[:, None]])
    with runtime_scope(runtime) as rt:

        def task():
            m = aug.copy()
            for k in range(n - 1):
                pivot = m[k, k]
                if pivot == 0.0:
                    raise SingularMatrixError(f"zero pivot at step {k}")
                f = m[k + 1 :, k] / pivot
                if not np.any(f):
                    continue
                rows, cols = n - k - 1, n + 1 - k
                fac = np.repeat(f[:, None], cols, axis=1)
                piv_row = np.repeat(m[k : k + 1, k:], rows, axis=0)
                out = rt.empty(rows, cols)
                rt.invoke_operator("mul", None, [rt.buffer(fac), rt.buffer(piv_row)], out)
                m[k + 1 :, k:] -= out.numpy()
                m[k + 1 :, k] = 0.0
            return back_substitute(m[:, :n], m[:, n])

        return run_task(rt, task)
