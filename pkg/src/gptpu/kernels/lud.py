"""Recursive LU decomposition without pivoting.

Each step peels one row and column off the trailing matrix ``S``::

    S = [[a, u^T],
         [v, S']]      ->   l = v / a,   S' <- S' - l u^T

The three pieces are extracted with device crops. The rank-1 update ``l u^T``
runs as fully_connected while the trailing block is narrower than
``small_dim``, and through the conv2D GEMM otherwise. The subtraction is done
on the host.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..errors import SingularMatrixError
from ..runtime import Runtime
from ._common import as_square, run_task, runtime_scope

SMALL_DIM = 8


def lud(a, runtime: Optional[Runtime] = None, small_dim: int = SMALL_DIM) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(L, U)`` with unit-lower ``L`` and upper ``U`` such that ``L @ U == a``."""
    s = as_square(a, "A").copy()
    n = s.shape[0]
    with runtime_scope(runtime) as rt:

        def task():
            cur = s
            lo = np.eye(n)
            up = np.zeros((n, n))
            for k in range(n):
                m = n - k
                buf = rt.buffer(cur)

                def crop(r0, r1, c0, c1):
                    out = rt.empty(r1 - r0, c1 - c0)
                    rt.invoke_operator("crop", None, [buf], out, window=(r0, r1, c0, c1))
                    return out.numpy()

                pivot = crop(0, 1, 0, 1)[0, 0]
                if pivot == 0.0:
                    raise SingularMatrixError(f"zero pivot at step {k}")
                up[k, k] = pivot
                if m == 1:
                    break
                u = crop(0, 1, 1, m)
                col = crop(1, m, 0, 1) / pivot
                up[k, k + 1 :] = u[0]
                lo[k + 1 :, k] = col[:, 0]
                out = rt.empty(m - 1, m - 1)
                kind = "fully_connected" if m - 1 < small_dim else "gemm"
                rt.invoke_operator(kind, None, [rt.buffer(col), rt.buffer(u)], out)
                cur = cur[1:, 1:] - out.numpy()
            return lo, up

        return run_task(rt, task)
