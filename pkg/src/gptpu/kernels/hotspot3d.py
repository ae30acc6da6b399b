"""HotSpot3D thermal simulation: a 7-point stencil over stacked layers.

The in-plane part of the stencil (centre plus four neighbours) runs on the
device as 3x3 conv2D instructions, one task per row band of each layer so
the bands spread over devices; the two vertical neighbours, the power input
and the ambient leak are added on the host.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import InvalidInputError
from ..runtime import Runtime
from ._common import row_bands, run_tasks, runtime_scope

# chip model constants of the classic benchmark
MAX_PD = 3.0e6
PRECISION = 0.001
SPEC_HEAT_SI = 1.75e6
K_SI = 100.0
FACTOR_CHIP = 0.5
T_CHIP = 0.0005
CHIP_HEIGHT = 0.016
CHIP_WIDTH = 0.016
AMB_TEMP = 80.0
# keep the centre weight comfortably positive so the scheme stays stable
MIN_CENTER = 0.25


@dataclass(frozen=True)
class StencilCoefficients:
    cc: float
    cn: float
    cs: float
    ce: float
    cw: float
    ct: float
    cb: float
    step_div_cap: float
    amb: float = AMB_TEMP

    def kernel(self) -> np.ndarray:
        """In-plane weights, laid out for the anchored conv on a 1-cell halo."""
        return np.array([[0.0, self.cn, 0.0], [self.cw, self.cc, self.ce], [0.0, self.cs, 0.0]])


def coefficients(rows: int, cols: int, layers: int) -> StencilCoefficients:
    dx = CHIP_HEIGHT / rows
    dy = CHIP_WIDTH / cols
    dz = T_CHIP / layers
    cap = FACTOR_CHIP * SPEC_HEAT_SI * T_CHIP * dx * dy
    rx = dy / (2.0 * K_SI * T_CHIP * dx)
    ry = dx / (2.0 * K_SI * T_CHIP * dy)
    rz = dz / (K_SI * dx * dy)
    max_slope = MAX_PD / (FACTOR_CHIP * T_CHIP * SPEC_HEAT_SI)
    dt = PRECISION / max_slope
    sdc = dt / cap
    # shrink the step if the grid is so fine that the centre weight would go negative
    spread = 2.0 / rx + 2.0 / ry + 3.0 / rz
    if 1.0 - sdc * spread < MIN_CENTER:
        sdc = (1.0 - MIN_CENTER) / spread
    ce = cw = sdc / rx
    cn = cs = sdc / ry
    ct = cb = sdc / rz
    cc = 1.0 - (2.0 * ce + 2.0 * cn + 3.0 * ct)
    return StencilCoefficients(cc, cn, cs, ce, cw, ct, cb, sdc)


def _as_grid(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3 or a.shape[1] < 3 or a.shape[2] < 3:
        raise InvalidInputError(f"{name} must be (layers, rows, cols) with rows, cols >= 3; got {np.shape(x)}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return a


def vertical_terms(temp: np.ndarray, power: np.ndarray, c: StencilCoefficients) -> np.ndarray:
    """Top/bottom neighbours (replicated at the ends), power and ambient."""
    above = np.concatenate([temp[1:], temp[-1:]], axis=0)
    below = np.concatenate([temp[:1], temp[:-1]], axis=0)
    return c.ct * above + c.cb * below + c.step_div_cap * power + c.ct * c.amb


def hotspot3d(temp, power, steps: int = 1, coeffs: Optional[StencilCoefficients] = None, runtime: Optional[Runtime] = None) -> np.ndarray:
    """Advance the temperature grid ``steps`` times; returns the same shape as ``temp``."""
    squeeze = np.ndim(temp) == 2
    t = _as_grid(temp, "temp")
    p = _as_grid(power, "power")
    if p.shape != t.shape:
        raise InvalidInputError(f"power shape {p.shape} differs from temperature shape {t.shape}")
    if steps < 0:
        raise InvalidInputError("steps must be >= 0")
    layers, rows, cols = t.shape
    c = coeffs or coefficients(rows, cols, layers)
    kern = c.kernel()
    ksum = float(kern.sum())
    with runtime_scope(runtime) as rt:
        kb = rt.buffer(kern)
        bands = row_bands(rows, rt.profile.arith_tile)

        def task(z, r0, r1, halo):
            # centre the band so the 8-bit grid resolves the variation, not the offset
            off = 0.5 * (halo.min() + halo.max())
            out = rt.empty(r1 - r0 + 2, cols + 2)
            rt.invoke_operator("conv2d", None, [rt.buffer(halo - off), kb], out)
            return out.numpy()[: r1 - r0, :cols] + off * ksum

        cur = t.copy()
        for _ in range(steps):
            nxt = vertical_terms(cur, p, c)
            padded = np.pad(cur, ((0, 0), (1, 1), (1, 1)), mode="edge")
            jobs = [(z, r0, r1, padded[z, r0 : r1 + 2]) for z in range(layers) for r0, r1 in bands]
            for (z, r0, r1, _), part in zip(jobs, run_tasks(rt, task, jobs)):
                nxt[z, r0:r1] += part
            cur = nxt
    return cur[0] if squeeze else cur
