"""Float64 references for the seven applications."""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr

from ..errors import SingularMatrixError
from .backprop import ETA, MOMENTUM, Network, StepResult, _check
from .blackscholes import d1_d2, price, validate_options
from .gaussian import back_substitute
from .hotspot3d import StencilCoefficients, _as_grid, coefficients, vertical_terms
from .pagerank import DAMPING, transition_matrix


def gemm_ref(a, b) -> np.ndarray:
    return np.asarray(a, dtype=np.float64) @ np.asarray(b, dtype=np.float64)


def pagerank_ref(adjacency, iterations: int = 20, damping: float = DAMPING) -> np.ndarray:
    m = transition_matrix(adjacency)
    n = m.shape[0]
    x = np.full(n, 1.0 / n)
    for _ in range(iterations):
        x = damping * (m @ x) + (1.0 - damping) / n
        x = x / np.abs(x).sum()
    return x


def hotspot3d_ref(temp, power, steps: int = 1, coeffs: StencilCoefficients = None) -> np.ndarray:
    squeeze = np.ndim(temp) == 2
    t = _as_grid(temp, "temp")
    p = _as_grid(power, "power")
    c = coeffs or coefficients(t.shape[1], t.shape[2], t.shape[0])
    for _ in range(steps):
        h = np.pad(t, ((0, 0), (1, 1), (1, 1)), mode="edge")
        plane = (
            c.cc * t
            + c.cn * h[:, :-2, 1:-1]
            + c.cs * h[:, 2:, 1:-1]
            + c.cw * h[:, 1:-1, :-2]
            + c.ce * h[:, 1:-1, 2:]
        )
        t = plane + vertical_terms(t, p, c)
    return t[0] if squeeze else t


def lud_ref(a) -> tuple[np.ndarray, np.ndarray]:
    """Doolittle factorization without pivoting."""
    u = np.array(a, dtype=np.float64)
    n = u.shape[0]
    lo = np.eye(n)
    for k in range(n - 1):
        if u[k, k] == 0.0:
            raise SingularMatrixError(f"zero pivot at step {k}")
        lo[k + 1 :, k] = u[k + 1 :, k] / u[k, k]
        u[k + 1 :, k:] -= np.outer(lo[k + 1 :, k], u[k, k:])
    if u[n - 1, n - 1] == 0.0:
        raise SingularMatrixError(f"zero pivot at step {n - 1}")
    return lo, np.triu(u)


def gaussian_ref(a, b) -> np.ndarray:
    m = np.hstack([np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64).reshape(-1, 1)])
    n = m.shape[0]
    for k in range(n - 1):
        if m[k, k] == 0.0:
            raise SingularMatrixError(f"zero pivot at step {k}")
        f = m[k + 1 :, k] / m[k, k]
        m[k + 1 :, k:] -= np.outer(f, m[k, k:])
    return back_substitute(m[:, :n], m[:, n])


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def backprop_ref(net: Network, samples, targets, rate: float = ETA, momentum: float = MOMENTUM) -> StepResult:
    x, y = _check(net, samples, targets)
    new = net.copy()
    acts = [x]
    for w, b in zip(new.weights, new.biases):
        acts.append(_sigmoid(acts[-1] @ w + b))
    out = acts[-1]
    delta = out * (1.0 - out) * (y - out)
    for i in range(len(new.weights) - 1, -1, -1):
        w, h = new.weights[i], acts[i]
        back = delta @ w.T
        dw = rate * (h.T @ delta) + momentum * new.prev_weight_deltas[i]
        db = rate * delta.sum(axis=0, keepdims=True) + momentum * new.prev_bias_deltas[i]
        new.weights[i] = w + dw
        new.biases[i] = new.biases[i] + db
        new.prev_weight_deltas[i] = dw
        new.prev_bias_deltas[i] = db
        delta = h * (1.0 - h) * back
    return StepResult(new, out, float(0.5 * np.sum((y - out) ** 2)))


def blackscholes_ref(options) -> np.ndarray:
    opts = validate_options(options)
    d1, d2 = d1_d2(opts)
    return price(opts, ndtr(d1), ndtr(d2))
