"""PageRank by power iteration, one fully_connected per iteration."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..errors import InvalidInputError
from ..runtime import Runtime
from ._common import as_square, run_task, runtime_scope

DAMPING = 0.85


def transition_matrix(adjacency) -> np.ndarray:
    """Column-stochastic matrix from ``adjacency[i, j]`` = weight of link j -> i.

    Nodes without out-links spread their rank uniformly.
    """
    a = as_square(adjacency, "adjacency")
    if np.any(a < 0):
        raise InvalidInputError("adjacency weights must be non-negative")
    n = a.shape[0]
    out = a.sum(axis=0)
    m = np.empty_like(a)
    dangling = out == 0
    m[:, ~dangling] = a[:, ~dangling] / out[~dangling]
    m[:, dangling] = 1.0 / n
    return m


def pagerank(adjacency, iterations: int = 20, damping: float = DAMPING, runtime: Optional[Runtime] = None) -> np.ndarray:
    """Rank vector after ``iterations`` damped power-method steps from uniform.

    Each step is ``x <- normalize(d * M x + (1 - d) / n)``; the product
    ``M x`` runs on the device as the row vector ``x`` times the model
    ``M^T``, and the damping and L1 normalization stay on the host.
    """
    if iterations < 0:
        raise InvalidInputError("iterations must be >= 0")
    if not 0.0 <= damping <= 1.0:
        raise InvalidInputError("damping must lie in [0, 1]")
    m = transition_matrix(adjacency)
    n = m.shape[0]
    x0 = np.full(n, 1.0 / n)
    if iterations == 0:
        return x0
    with runtime_scope(runtime) as rt:
        model = rt.buffer(np.ascontiguousarray(m.T))

        def task():
            x = x0
            for _ in range(iterations):
                out = rt.empty(1, n)
                rt.invoke_operator("fully_connected", None, [rt.buffer(x[None, :]), model], out)
                x = damping * out.numpy()[0] + (1.0 - damping) / n
                x = x / np.abs(x).sum()
            return x

        return run_task(rt, task)
