"""Fit the CNDF coefficients used by the BlackScholes kernel.

For x >= 0 the upper tail is written as

    Q(x) = 1 - N(x) = phi(x) * R(x),   R(x) ~= sum_{i=0..9} c_i * k**i,   k = 1 / (1 + GAMMA * x)

The device evaluates the power-basis product; the host multiplies by phi(x).
Negative arguments use N(-x) = Q(x).

The fit minimizes the relative error of R on [0, 6] and then snaps the
coefficients onto an 8-bit grid: ``c_i = code_i * STEP`` with integer codes in
[0, 255] and the largest code exactly 255. A coefficient column quantized with
the usual max-range rule then maps to exactly these codes, so the model operand
carries no quantization error of its own. The integer codes are refined by
coordinate descent after rounding.

Run ``python tools/fit_cndf.py`` to print the constants frozen in
``gptpu/kernels/blackscholes.py``.
"""

import numpy as np
from scipy.optimize import nnls
from scipy.special import ndtr

GAMMA = 0.2316419
DEGREE = 9


def _problem(points: int = 3001):
    x = np.linspace(0.0, 6.0, points)
    k = 1.0 / (1.0 + GAMMA * x)
    phi = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    r = (1.0 - ndtr(x)) / phi
    basis = k[:, None] ** np.arange(DEGREE + 1)
    return basis, r


def _refine(a: np.ndarray, t: np.ndarray, codes: np.ndarray) -> tuple[np.ndarray, float]:
    def obj(n):
        res = a @ n - t
        return float(res @ res)

    cur = obj(codes)
    improved = True
    while improved:
        improved = False
        for i in range(len(codes)):
            for step in (-5, -3, -2, -1, 1, 2, 3, 5):
                cand = codes.copy()
                cand[i] += step
                if cand[i] < 0 or cand[i] > 255 or cand.max() != 255:
                    continue
                v = obj(cand)
                if v < cur:
                    codes, cur, improved = cand, v, True
    return codes, cur


def fit():
    basis, r = _problem()
    w = 1.0 / r
    cont, _ = nnls(basis * w[:, None], r * w)
    best = None
    for f in np.linspace(0.7, 1.6, 91):
        step = cont.max() * f / 255.0
        codes = np.clip(np.round(cont / step), 0, 255)
        codes[np.argmax(codes)] = 255
        codes, cur = _refine(basis * w[:, None] * step, r * w, codes)
        if best is None or cur < best[0]:
            best = (cur, step, codes)
    _, step, codes = best
    rel = np.abs(basis @ (codes * step) - r) / r
    return codes.astype(int), float(step), float(rel.max())


if __name__ == "__main__":
    codes, step, err = fit()
    print(f"CNDF_CODES = {tuple(int(c) for c in codes)}")
    print(f"CNDF_STEP = {step!r}")
    print(f"# max relative error of R on [0, 6]: {err:.3e}")
