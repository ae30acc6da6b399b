"""Lowering of host operations into tiled device programs.

A request (operation, operands, quantization flags) becomes an
:class:`InstructionProgram`: a list of per-tile device instructions whose
operands are already quantized, plus the host-side step that stitches the
dequantized tile results back together.

Two scaling policies pick each instruction's output scale:

``interval``
    bound the output from the quantized operand extents and, for matrix
    instructions, the concrete model tile; ``S = 1/max(|out_max|, |out_min|)``.
``formula``
    the closed forms of :func:`scale_factor`, which only look at operand
    ranges and the accumulation length.

Both are overflow-free for operands inside their declared ranges. The
interval policy is the default because it wastes fewer output codes.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .device import DeviceProfile, Instruction, QuantizedBlock, round_half_away
from .device import Device, interval
from .errors import InvalidInputError, InvalidShapeError, UnsupportedOperationError
from .gemmconv import GemmPlan, column_kernels, stack_rows
from .ops import HOST_KINDS, PAIRWISE, REDUCE, OpDescriptor, normalize_kind, op
from .oracle import conv_output_shape, oracle_execute, split_kernels
from .tensor import HostTensor, RangeStats, TensorShape, as_array, range_stats

SCALING_POLICIES = ("interval", "formula")
AGGREGATIONS = ("none", "sum-partials", "reduce-partials")


# -- quantization parameters ------------------------------------------------


@dataclass(frozen=True)
class QuantParams:
    """How a tensor maps onto 8-bit codes.

    ``scale`` is the normalizing factor S (``1/bound``); ``code_scale`` is
    the codes-per-unit multiplier actually applied, ``255*S`` or ``127*S``
    depending on signedness, possibly snapped down to an integer so that
    integer data stays exact.
    """

    scale: float
    zero_point: int
    declared_range: tuple[float, float]
    code_scale: float
    degenerate: bool = False

    def code_of(self, x: float) -> int:
        return int(round_half_away(np.float64(x) * self.code_scale)) + self.zero_point


def _snap(code_scale: float, integral: bool) -> float:
    if integral and code_scale >= 1.0:
        return float(math.floor(code_scale))
    return code_scale


def input_params(stats: RangeStats) -> QuantParams:
    """Quantization of a data operand over its (zero-widened) range."""
    lo, hi = stats.widened()
    span = hi - lo
    if span == 0.0:
        return QuantParams(1.0, 0, (lo, hi), 1.0, degenerate=True)
    cs = _snap(255.0 / span, stats.integral)
    # when both endpoints sit on a rounding tie the top one clips to 255,
    # still within half a step
    zp = int(round_half_away(-lo * cs))
    return QuantParams(1.0 / span, zp, (lo, hi), cs)


def output_params(bound: float, nonneg: bool, integral: bool = False) -> QuantParams:
    """Output quantization for results known to satisfy ``|v| <= bound``."""
    lo = 0.0 if nonneg else -bound
    if not bound > 0:
        return QuantParams(1.0, 0 if nonneg else 128, (0.0, 0.0), 1.0, degenerate=True)
    cs = _snap((255.0 if nonneg else 127.0) / bound, integral)
    return QuantParams(1.0 / bound, 0 if nonneg else 128, (lo, bound), cs)


def _widened_span(stats: RangeStats) -> float:
    lo, hi = stats.widened()
    return hi - lo


def scale_factor(kind: str, stats_a: RangeStats, stats_b: Optional[RangeStats] = None, inner_dim: int = 1) -> QuantParams:
    """Closed-form output scale for one operation.

    With both operands spanning ``r = |max - min|``: ``1/(r^2 N)`` for
    conv2d, fully_connected and gemm; ``1/(2r)`` for add and sub; ``1/r^2``
    for mul; ``1/r`` otherwise. Distinct operand ranges generalize to
    ``1/(ra rb N)``, ``1/(ra + rb)`` and ``1/(ra rb)``. A zero range falls back to
    unit scale and sets ``degenerate``.

    Spans are taken over the zero-widened ranges, as for input codes, so that
    every operand magnitude is bounded by its span even when the range
    excludes zero.
    """
    kind = normalize_kind(kind)
    if inner_dim < 1:
        raise InvalidInputError(f"inner dimension must be >= 1, got {inner_dim}")
    sb = stats_b if stats_b is not None else stats_a
    ra, rb = _widened_span(stats_a), _widened_span(sb)
    both_nonneg = stats_a.min >= 0 and sb.min >= 0
    integral = stats_a.integral and sb.integral
    if kind in ("conv2d", "fully_connected", "gemm"):
        bound, nonneg = ra * rb * inner_dim, both_nonneg
    elif kind in ("add", "sub"):
        bound, nonneg = ra + rb, both_nonneg and kind == "add"
    elif kind == "mul":
        bound, nonneg = ra * rb, both_nonneg
    else:
        bound = ra
        nonneg = kind == "relu" or stats_a.min >= 0
        integral = stats_a.integral and kind not in ("mean", "tanh")
    return output_params(bound, nonneg, integral)


def chain_scale(steps: Sequence[tuple], stats: RangeStats) -> QuantParams:
    """Scale for a chain of operations fed from one input range.

    ``steps`` is a sequence of ``(kind, inner_dim)``. Each step's declared
    output range becomes the next step's operand range, so bounds compose
    multiplicatively along the chain.
    """
    if not steps:
        raise InvalidInputError("empty operation chain")
    cur = stats
    qp = None
    for kind, n in steps:
        qp = scale_factor(kind, cur, cur, n)
        cur = RangeStats.of(*qp.declared_range, integral=cur.integral)
    return qp


def quantize_counted(t, qp: QuantParams) -> tuple[QuantizedBlock, int]:
    """Quantize and report how many values had to be clamped."""
    x = np.asarray(as_array(t) if isinstance(t, HostTensor) else t, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    codes = np.clip(round_half_away(x * qp.code_scale) + qp.zero_point, 0, 255)
    lo, hi = qp.declared_range
    n = int(np.count_nonzero((x < lo) | (x > hi))) if hi > lo else 0
    return QuantizedBlock(codes.astype(np.uint8), qp.code_scale, qp.zero_point), n


def quantize(t, qp: QuantParams) -> QuantizedBlock:
    return quantize_counted(t, qp)[0]


def dequantize(b: QuantizedBlock) -> HostTensor:
    return HostTensor(b.dequantize())


def block_key(block: QuantizedBlock) -> str:
    """Content address of a block; equal blocks share a key."""
    h = hashlib.blake2b(digest_size=12)
    h.update(np.asarray(block.values.shape, dtype=np.int64).tobytes())
    h.update(np.float64(block.scale).tobytes())
    h.update(bytes([block.zero_point]))
    h.update(block.values.tobytes())
    return h.hexdigest()


# -- program structures ------------------------------------------------------


@dataclass(frozen=True)
class QuantFlags:
    """Per-request quantization options.

    ``ranges`` optionally declares a ``(lo, hi)`` range per operand; values
    outside it are clamped and counted.
    """

    method: str = "interval"
    ranges: tuple = ()

    def __post_init__(self):
        if self.method not in SCALING_POLICIES:
            raise InvalidInputError(f"unknown scaling policy {self.method!r}")
        rngs = []
        for r in self.ranges:
            if r is None:
                rngs.append(None)
                continue
            lo, hi = float(r[0]), float(r[1])
            if not lo <= hi:
                raise InvalidInputError(f"declared range ({lo}, {hi}) is inverted")
            rngs.append((lo, hi))
        object.__setattr__(self, "ranges", tuple(rngs))

    def range_for(self, i: int):
        return self.ranges[i] if i < len(self.ranges) else None


@dataclass(frozen=True)
class TilingPlan:
    tile_shape: TensorShape
    grid: tuple[int, int]
    inner_blocks: int = 1
    aggregation: str = "none"

    @property
    def tile_count(self) -> int:
        return self.grid[0] * self.grid[1] * self.inner_blocks


@dataclass(frozen=True, eq=False)
class TileOperand:
    key: str
    block: QuantizedBlock
    # the exact float64 tile the block encodes, in device layout
    real: np.ndarray
    clamped: int = 0
    degenerate: bool = False


@dataclass(frozen=True, eq=False)
class TileInstruction:
    """One device instruction of a lowered program.

    ``dest`` is ``(row, col, rows, cols)``: the result's top-left
    ``rows x cols`` region lands at ``(row, col)`` of the output. Convolutions
    with several kernels carry their channel layout in ``channels`` and
    ``chan_width``. ``shared`` names the operand that is the reusable model
    (-1 when there is none).
    """

    op: OpDescriptor
    operands: tuple
    out_quant: Optional[tuple]
    coords: tuple
    dest: tuple
    weight: int = 0
    shared: int = -1
    channels: int = 1
    chan_width: int = 0

    def device_instruction(self) -> Instruction:
        return Instruction(self.op, tuple(o.key for o in self.operands), self.out_quant)

    @property
    def shared_key(self) -> Optional[str]:
        return self.operands[self.shared].key if self.shared >= 0 else None


@dataclass(frozen=True, eq=False)
class InstructionProgram:
    request: OpDescriptor
    instructions: tuple
    plan: TilingPlan
    output_shape: TensorShape
    flags: QuantFlags = field(default_factory=QuantFlags)
    out_chan_width: int = 0
    clamped: int = 0
    degenerate: int = 0

    @property
    def aggregation(self) -> str:
        return self.plan.aggregation

    @property
    def expected_count(self) -> int:
        return self.plan.tile_count

    def host_steps(self) -> list[str]:
        if self.aggregation == "reduce-partials":
            how = "weighted mean of tile means" if self.request.kind == "mean" else "max of tile maxima"
            return [f"reduce {len(self.instructions)} partials: {how}"]
        if self.aggregation == "sum-partials":
            return [f"sum {len(self.instructions)} dequantized partials into {self.output_shape}"]
        return [f"place {len(self.instructions)} tiles into {self.output_shape}"]

    def assemble(self, results: Sequence[np.ndarray]) -> HostTensor:
        """Aggregate dequantized per-instruction results in float64."""
        if len(results) != len(self.instructions):
            raise InvalidInputError(f"expected {len(self.instructions)} results, got {len(results)}")
        if self.aggregation == "reduce-partials":
            vals = np.array([float(np.asarray(r).reshape(-1)[0]) for r in results])
            if self.request.kind == "max":
                return HostTensor([[vals.max()]])
            w = np.array([ins.weight for ins in self.instructions], dtype=np.float64)
            return HostTensor([[float(np.dot(w, vals) / w.sum())]])
        out = np.zeros(self.output_shape.as_tuple())
        for ins, res in zip(self.instructions, results):
            res = np.asarray(res, dtype=np.float64)
            r0, c0, nr, nc = ins.dest
            if ins.channels == 1:
                out[r0 : r0 + nr, c0 : c0 + nc] += res[:nr, :nc]
            else:
                for c in range(ins.channels):
                    g = c * self.out_chan_width + c0
                    out[r0 : r0 + nr, g : g + nc] += res[:nr, c * ins.chan_width : c * ins.chan_width + nc]
        return HostTensor(out)


# -- tile helpers ------------------------------------------------------------


def _padded(tile: np.ndarray, rows: int, cols: int) -> np.ndarray:
    if tile.shape == (rows, cols):
        return tile
    out = np.zeros((rows, cols))
    out[: tile.shape[0], : tile.shape[1]] = tile
    return out


def _tile_stats(tile: np.ndarray, declared) -> RangeStats:
    if declared is None:
        return range_stats(tile)
    lo, hi = declared
    integral = bool(lo == math.floor(lo) and hi == math.floor(hi) and np.all(tile == np.rint(tile)))
    return RangeStats.of(lo, hi, integral=integral)


class _Quantizer:
    """Quantizes tiles once per (operand, tile slot) during one lowering."""

    def __init__(self, flags: QuantFlags):
        self.flags = flags
        self.cache: dict = {}
        self.clamped = 0
        self.degenerate = 0

    def params(self, tile: np.ndarray, which: int) -> tuple[QuantParams, RangeStats]:
        stats = _tile_stats(tile, self.flags.range_for(which))
        return input_params(stats), stats

    def operand(self, slot, tile: np.ndarray, which: int, layout=None, layout_fill=True) -> tuple:
        """Quantize ``tile`` (optionally re-laid-out) and return (operand, params, stats)."""
        hit = self.cache.get(slot)
        if hit is not None:
            return hit
        qp, stats = self.params(tile, which)
        block, n = quantize_counted(tile, qp)
        real = np.clip(tile, *qp.declared_range) if n else tile
        if layout is not None:
            codes = layout(block.values, qp.zero_point)
            block = QuantizedBlock(codes, block.scale, block.zero_point)
            real = layout(real, 0.0)
        opnd = TileOperand(block_key(block), block, np.asarray(real, dtype=np.float64), n, qp.degenerate)
        self.clamped += n
        self.degenerate += int(qp.degenerate)
        res = (opnd, qp, stats)
        self.cache[slot] = res
        return res


def _deq_extent(qp: QuantParams) -> tuple[float, float]:
    """Smallest and largest dequantized value reachable from the declared range."""
    lo, hi = qp.declared_range
    c_lo = min(max(qp.code_of(lo), 0), 255)
    c_hi = min(max(qp.code_of(hi), 0), 255)
    return ((c_lo - qp.zero_point) / qp.code_scale, (c_hi - qp.zero_point) / qp.code_scale)


def _matrix_out_quant(data_qp: QuantParams, model: QuantizedBlock, model_cols: np.ndarray, integral: bool) -> tuple:
    """Interval bound of ``data @ model`` column by column.

    ``model_cols`` holds the model's centered codes with one column per output
    channel (for conv, one flattened kernel per column).
    """
    dlo, dhi = _deq_extent(data_qp)
    w = model_cols / model.scale
    wp = np.clip(w, 0, None).sum(axis=0)
    wn = np.clip(w, None, 0).sum(axis=0)
    hi = dhi * wp + dlo * wn
    lo = dlo * wp + dhi * wn
    bound = float(max(np.abs(hi).max(initial=0), np.abs(lo).max(initial=0)))
    qp = output_params(bound, bool(lo.min(initial=0) >= 0), integral)
    return (qp.code_scale, qp.zero_point)


def _formula_out_quant(kind, sa: RangeStats, sb: Optional[RangeStats], n: int) -> tuple:
    qp = scale_factor(kind, sa, sb, n)
    return (qp.code_scale, qp.zero_point)


def _grid(rows: int, cols: int, t: int) -> tuple[int, int]:
    return (math.ceil(rows / t), math.ceil(cols / t))


# -- lowering per kind -------------------------------------------------------


def _lower_elementwise(desc, arrs, flags, profile, q: _Quantizer):
    t = profile.arith_tile
    a = arrs[0]
    if desc.arity == 2 and arrs[1].shape != a.shape:
        raise InvalidShapeError(f"pairwise operands differ in shape: {a.shape} vs {arrs[1].shape}")
    m, n = a.shape
    p, qn = _grid(m, n, t)
    instrs = []
    for i in range(p):
        for j in range(qn):
            r0, c0 = i * t, j * t
            nr, nc = min(t, m - r0), min(t, n - c0)
            ops_, qps, sts = [], [], []
            for w, arr in enumerate(arrs):
                tile = _padded(arr[r0 : r0 + nr, c0 : c0 + nc], t, t)
                o, qp, st = q.operand((w, i, j), tile, w)
                ops_.append(o)
                qps.append(qp)
                sts.append(st)
            if flags.method == "formula":
                oq = _formula_out_quant(desc.kind, sts[0], sts[1] if len(sts) > 1 else None, 1)
            else:
                oq = _elementwise_interval(desc.kind, qps, sts)
            instrs.append(
                TileInstruction(op(desc.kind), tuple(ops_), oq, (i, j, 0), (r0, c0, nr, nc), shared=len(ops_) - 1 if len(ops_) == 2 else -1)
            )
    plan = TilingPlan(TensorShape(t, t), (p, qn), 1, "none")
    return instrs, plan, TensorShape(m, n), 0


def _elementwise_interval(kind, qps, sts) -> tuple:
    ea = _deq_extent(qps[0])
    integral = all(s.integral for s in sts)
    if kind in PAIRWISE:
        lo, hi = interval(kind, ea, _deq_extent(qps[1]))
    elif kind == "tanh":
        lo, hi = math.tanh(ea[0]), math.tanh(ea[1])
        integral = False
    else:
        lo, hi = 0.0, max(ea[1], 0.0)
    qp = output_params(max(abs(lo), abs(hi)), lo >= 0, integral)
    return (qp.code_scale, qp.zero_point)


def _lower_reduce(desc, arrs, flags, profile, q: _Quantizer):
    t = profile.reduce_tile
    a = arrs[0]
    m, n = a.shape
    p, qn = _grid(m, n, t)
    instrs = []
    for i in range(p):
        for j in range(qn):
            # edge tiles stay unpadded: zero padding would bias mean weights and max
            tile = a[i * t : (i + 1) * t, j * t : (j + 1) * t]
            o, _, _ = q.operand((0, i, j), tile, 0)
            instrs.append(TileInstruction(op(desc.kind), (o,), None, (i, j, 0), (0, 0, 1, 1), weight=tile.size))
    plan = TilingPlan(TensorShape(t, t), (p, qn), 1, "reduce-partials")
    return instrs, plan, TensorShape(1, 1), 0


def _lower_fully_connected(desc, arrs, flags, profile, q: _Quantizer):
    t = profile.arith_tile
    v, w = arrs
    if v.shape[1] != w.shape[0]:
        raise InvalidShapeError(f"fully_connected inner dimensions differ: {v.shape} x {w.shape}")
    b, n = v.shape
    k = w.shape[1]
    pi, pk, pj = math.ceil(b / t), math.ceil(n / t), math.ceil(k / t)
    instrs = []
    for j in range(pj):
        for kk in range(pk):
            for i in range(pi):
                r0, i0, c0 = i * t, kk * t, j * t
                nb, ni, nc = min(t, b - r0), min(t, n - i0), min(t, k - c0)
                vo, vqp, vst = q.operand((0, i, kk), _padded(v[r0 : r0 + nb, i0 : i0 + ni], nb, t), 0)
                wo, wqp, wst = q.operand((1, kk, j), _padded(w[i0 : i0 + ni, c0 : c0 + nc], t, t), 1)
                if flags.method == "formula":
                    oq = _formula_out_quant("fully_connected", vst, wst, ni)
                else:
                    oq = _matrix_out_quant(vqp, wo.block, wo.block.centered(), vst.integral and wst.integral)
                instrs.append(
                    TileInstruction(op("fully_connected"), (vo, wo), oq, (i, j, kk), (r0, c0, nb, nc), shared=1)
                )
    plan = TilingPlan(TensorShape(t, t), (pi, pj), pk, "sum-partials")
    return instrs, plan, TensorShape(b, k), 0


def _lower_gemm(desc, arrs, flags, profile, q: _Quantizer):
    t = profile.arith_tile
    a, b = arrs
    if a.shape[1] != b.shape[0]:
        raise InvalidShapeError(f"gemm inner dimensions differ: {a.shape} x {b.shape}")
    m, n = a.shape
    k = b.shape[1]
    pi, pk, pj = math.ceil(m / t), math.ceil(n / t), math.ceil(k / t)
    instrs = []
    for j in range(pj):
        for kk in range(pk):
            for i in range(pi):
                r0, i0, c0 = i * t, kk * t, j * t
                nm, ni, nc = min(t, m - r0), min(t, n - i0), min(t, k - c0)
                s = GemmPlan(nm, ni, nc).s
                ao, aqp, ast = q.operand(
                    (0, i, kk), a[r0 : r0 + nm, i0 : i0 + ni], 0, layout=lambda x, f, s=s: stack_rows(x, s, f)
                )
                bo, bqp, bst = q.operand(
                    (1, kk, j), b[i0 : i0 + ni, c0 : c0 + nc], 1, layout=lambda x, f, s=s: column_kernels(x, s, f)
                )
                if flags.method == "formula":
                    oq = _formula_out_quant("conv2d", ast, bst, ni)
                else:
                    kcols = split_kernels(bo.block.centered(), s).reshape(nc, s * s).T
                    oq = _matrix_out_quant(aqp, bo.block, kcols, ast.integral and bst.integral)
                instrs.append(
                    TileInstruction(
                        op("conv2d", stride=(s, s), kernel_rows=s), (ao, bo), oq, (i, j, kk), (r0, c0, nm, nc), shared=1
                    )
                )
    plan = TilingPlan(TensorShape(t, t), (pi, pj), pk, "sum-partials")
    return instrs, plan, TensorShape(m, k), 0


def _lower_conv2d(desc, arrs, flags, profile, q: _Quantizer):
    t = profile.arith_tile
    x, kern = arrs
    ks = split_kernels(kern, desc.kernel_rows)
    nch, lr, lc = ks.shape
    m, n = x.shape
    if lr > m or lc > n:
        raise InvalidShapeError(f"kernel {lr}x{lc} larger than input {m}x{n}")
    sx, sy = desc.stride
    out_r, out_c = conv_output_shape(m, n, desc.stride)
    p, qn = _grid(out_r, out_c, t)
    ko, kqp, kst = q.operand(("k",), np.asarray(kern, dtype=np.float64), 1)
    kcols = split_kernels(ko.block.centered(), desc.kernel_rows).reshape(nch, lr * lc).T
    instrs = []
    for i in range(p):
        for j in range(qn):
            o0, p0 = i * t, j * t
            tr, tc = min(t, out_r - o0), min(t, out_c - p0)
            xr0, xc0 = o0 * sx, p0 * sy
            xr1 = min(m, xr0 + (tr - 1) * sx + lr)
            xc1 = min(n, xc0 + (tc - 1) * sy + lc)
            tile = _padded(x[xr0:xr1, xc0:xc1], max(xr1 - xr0, lr), max(xc1 - xc0, lc))
            xo, xqp, xst = q.operand((0, i, j), tile, 0)
            if flags.method == "formula":
                oq = _formula_out_quant("conv2d", xst, kst, lr * lc)
            else:
                oq = _matrix_out_quant(xqp, ko.block, kcols, xst.integral and kst.integral)
            chan_w = conv_output_shape(tile.shape[0], tile.shape[1], desc.stride)[1]
            instrs.append(
                TileInstruction(
                    op("conv2d", stride=desc.stride, kernel_rows=lr),
                    (xo, ko),
                    oq,
                    (i, j, 0),
                    (o0, p0, tr, tc),
                    shared=1,
                    channels=nch,
                    chan_width=chan_w,
                )
            )
    plan = TilingPlan(TensorShape(t, t), (p, qn), 1, "sum-partials")
    return instrs, plan, TensorShape(out_r, nch * out_c), out_c


def _lower_crop(desc, arrs, flags, profile, q: _Quantizer):
    t = profile.arith_tile
    a = arrs[0]
    m, n = a.shape
    r0, r1, c0, c1 = desc.window
    if not (0 <= r0 < r1 <= m and 0 <= c0 < c1 <= n):
        raise InvalidShapeError(f"crop window {desc.window} outside {m}x{n}")
    instrs = []
    ti0, ti1 = r0 // t, (r1 - 1) // t
    tj0, tj1 = c0 // t, (c1 - 1) // t
    for i in range(ti0, ti1 + 1):
        for j in range(tj0, tj1 + 1):
            tr0, tc0 = i * t, j * t
            tile = a[tr0 : min(m, tr0 + t), tc0 : min(n, tc0 + t)]
            lr0, lr1 = max(r0, tr0) - tr0, min(r1, tr0 + t) - tr0
            lc0, lc1 = max(c0, tc0) - tc0, min(c1, tc0 + t) - tc0
            o, _, _ = q.operand((0, i, j), tile, 0)
            instrs.append(
                TileInstruction(
                    op("crop", window=(lr0, lr1, lc0, lc1)),
                    (o,),
                    None,
                    (i, j, 0),
                    (tr0 + lr0 - r0, tc0 + lc0 - c0, lr1 - lr0, lc1 - lc0),
                )
            )
    plan = TilingPlan(TensorShape(t, t), (ti1 - ti0 + 1, tj1 - tj0 + 1), 1, "none")
    return instrs, plan, TensorShape(r1 - r0, c1 - c0), 0


def _lower_ext(desc, arrs, flags, profile, q: _Quantizer):
    t = profile.arith_tile
    a = arrs[0]
    m, n = a.shape
    tr, tcn = desc.target
    if tr < m or tcn < n:
        raise InvalidShapeError(f"ext target {desc.target} smaller than {a.shape}")
    instrs = []
    p, qn = _grid(m, n, t)
    for i in range(p):
        for j in range(qn):
            r0, c0 = i * t, j * t
            tile = a[r0 : r0 + t, c0 : c0 + t]
            # tiles on the source's last row/column also cover the new area
            er = tr - r0 if i == p - 1 else tile.shape[0]
            ec = tcn - c0 if j == qn - 1 else tile.shape[1]
            o, _, _ = q.operand((0, i, j), tile, 0)
            instrs.append(TileInstruction(op("ext", target=(er, ec)), (o,), None, (i, j, 0), (r0, c0, er, ec)))
    plan = TilingPlan(TensorShape(t, t), (p, qn), 1, "none")
    return instrs, plan, TensorShape(tr, tcn), 0


_LOWERERS = {
    "fully_connected": _lower_fully_connected,
    "gemm": _lower_gemm,
    "conv2d": _lower_conv2d,
    "crop": _lower_crop,
    "ext": _lower_ext,
}


def lower(desc: OpDescriptor, inputs: Sequence, flags: Optional[QuantFlags] = None, profile: Optional[DeviceProfile] = None) -> InstructionProgram:
    """Quantize, tile and rewrite ``desc`` over ``inputs`` into a device program."""
    if not isinstance(desc, OpDescriptor):
        desc = op(desc)
    if desc.kind not in HOST_KINDS:
        raise UnsupportedOperationError(desc.kind)
    if len(inputs) != desc.arity:
        raise InvalidInputError(f"{desc.kind} takes {desc.arity} operand(s), got {len(inputs)}")
    flags = flags or QuantFlags()
    profile = profile or DeviceProfile()
    arrs = [as_array(x) for x in inputs]
    q = _Quantizer(flags)
    if desc.kind in _LOWERERS:
        fn = _LOWERERS[desc.kind]
    elif desc.kind in REDUCE:
        fn = _lower_reduce
    else:
        fn = _lower_elementwise
    instrs, plan, shape, chan_w = fn(desc, arrs, flags, profile, q)
    if len(instrs) != plan.tile_count:
        raise AssertionError(f"{desc.kind}: {len(instrs)} instructions for a {plan.tile_count}-tile plan")
    return InstructionProgram(desc, tuple(instrs), plan, shape, flags, chan_w, q.clamped, q.degenerate)


# -- replay ------------------------------------------------------------------


def oracle_results(program: InstructionProgram) -> list[np.ndarray]:
    return [oracle_execute(ins.op, [o.real for o in ins.operands]).data for ins in program.instructions]


def replay_oracle(program: InstructionProgram) -> HostTensor:
    """Run every tile through the float64 oracle and aggregate.

    With no clamping this equals ``oracle_execute`` of the whole request.
    """
    return program.assemble(oracle_results(program))


def run_on_device(ins: TileInstruction, device: Device) -> QuantizedBlock:
    keys = [o.key for o in ins.operands]
    for o in ins.operands:
        device.ensure_loaded(o.key, o.block, pinned=keys)
    return device.execute(ins.device_instruction())


def execute_local(program: InstructionProgram, device: Optional[Device] = None) -> tuple[HostTensor, Device]:
    """Execute a program on a single device, in order, and aggregate."""
    device = device or Device()
    results = [run_on_device(ins, device).dequantize() for ins in program.instructions]
    return program.assemble(results), device
