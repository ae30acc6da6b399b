"""Software model of one Edge-TPU-class 8-bit matrix accelerator.

A :class:`Device` holds quantized blocks in a bounded on-chip memory, executes
the eleven native instructions on them with 32-bit integer accumulation, and
keeps a simulated clock driven by per-instruction throughput and a fixed
host-to-device transfer rate. Nothing here is cycle accurate.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import (
    DeviceMemoryFullError,
    InvalidInputError,
    InvalidShapeError,
    MissingOperandError,
    SaturationError,
    UnsupportedOperationError,
)
from .ops import ACTIVATION, DEVICE_KINDS, PAIRWISE, REDUCE, RESHAPE, OpDescriptor
from .oracle import conv_output_shape, split_kernels
from .tensor import TensorShape

MB = 1 << 20
INT32_MAX = (1 << 31) - 1

# measured operator throughput, operations per second
DEFAULT_OPS = {
    "conv2d": 10268.80,
    "fully_connected": 51924.96,
    "sub": 6273.28,
    "add": 6203.52,
    "mul": 14515.84,
    "crop": 4867.96,
    "ext": 1604.78,
    "mean": 408.54,
    "max": 477.08,
    "tanh": 3232.31,
    "relu": 11194.26,
}


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


class QuantizedBlock:
    """An 8-bit tile: ``real = (code - zero_point) / scale``.

    ``scale`` is in codes per real unit, so quantizing multiplies by it.
    """

    __slots__ = ("values", "scale", "zero_point")

    def __init__(self, values, scale: float, zero_point: int = 0):
        codes = np.asarray(values)
        if codes.ndim == 1:
            codes = codes.reshape(1, -1)
        if codes.ndim != 2 or codes.size == 0:
            raise InvalidInputError("quantized block needs a non-empty 2-D code array")
        if codes.dtype != np.uint8:
            if np.any((codes < 0) | (codes > 255)) or np.any(codes != np.rint(codes)):
                raise InvalidInputError("codes must be integers in [0, 255]")
            codes = codes.astype(np.uint8)
        scale = float(scale)
        if not (scale > 0 and math.isfinite(scale)):
            raise InvalidInputError(f"scale must be positive and finite, got {scale}")
        zp = int(zero_point)
        if not 0 <= zp <= 255:
            raise InvalidInputError(f"zero point {zp} outside [0, 255]")
        codes = np.ascontiguousarray(codes)
        codes.flags.writeable = False
        self.values = codes
        self.scale = scale
        self.zero_point = zp

    @property
    def shape(self) -> TensorShape:
        return TensorShape(*self.values.shape)

    @property
    def nbytes(self) -> int:
        return int(self.values.size)

    def centered(self) -> np.ndarray:
        """Codes minus the zero point, as exact integers in float64."""
        return self.values.astype(np.float64) - self.zero_point

    def dequantize(self) -> np.ndarray:
        return self.centered() / self.scale

    def real_range(self) -> tuple[float, float]:
        """Real interval covered by the full code range [0, 255]."""
        return (-self.zero_point / self.scale, (255 - self.zero_point) / self.scale)

    def __eq__(self, other):
        if not isinstance(other, QuantizedBlock):
            return NotImplemented
        return (
            self.scale == other.scale
            and self.zero_point == other.zero_point
            and self.values.shape == other.values.shape
            and bool(np.array_equal(self.values, other.values))
        )

    __hash__ = None

    def __repr__(self):
        return f"QuantizedBlock({self.shape}, scale={self.scale:g}, zp={self.zero_point})"


@dataclass
class DeviceProfile:
    onchip_memory_bytes: int = 8 * MB
    ops: dict = field(default_factory=lambda: dict(DEFAULT_OPS))
    transfer_ms_per_mb: float = 6.0
    arith_tile: int = 128
    reduce_tile: int = 64

    def __post_init__(self):
        if self.onchip_memory_bytes <= 0:
            raise InvalidInputError("on-chip memory must be positive")
        if self.transfer_ms_per_mb <= 0:
            raise InvalidInputError("transfer rate must be positive")
        missing = set(DEVICE_KINDS) - set(self.ops)
        if missing:
            raise InvalidInputError(f"profile lacks OPS for {sorted(missing)}")
        for k, v in self.ops.items():
            if not v > 0:
                raise InvalidInputError(f"OPS for {k} must be positive")
        if self.arith_tile < 1 or self.reduce_tile < 1:
            raise InvalidInputError("tile edges must be positive")

    def transfer_us(self, nbytes: int) -> float:
        return nbytes / MB * self.transfer_ms_per_mb * 1000.0

    def exec_us(self, kind: str) -> float:
        return 1e6 / self.ops[kind]


@dataclass(frozen=True)
class Instruction:
    """One device instruction; operands name loaded blocks.

    ``out_quant`` fixes the output ``(scale, zero_point)``; when omitted the
    device picks a scale that cannot saturate for the operands it sees.
    """

    op: OpDescriptor
    operands: tuple
    out_quant: Optional[tuple] = None

    def __post_init__(self):
        if self.op.kind not in DEVICE_KINDS:
            raise UnsupportedOperationError(f"{self.op.kind} is not a device instruction")
        if len(self.operands) != self.op.arity:
            raise InvalidInputError(f"{self.op.kind} takes {self.op.arity} operand(s)")

    @property
    def kind(self) -> str:
        return self.op.kind


def output_quant_for_bound(bound: float, nonneg: bool) -> tuple[float, int]:
    """Largest code scale that keeps any value with ``|v| <= bound`` in range."""
    if not bound > 0:
        return (1.0, 0 if nonneg else 128)
    return (255.0 / bound, 0) if nonneg else (127.0 / bound, 128)


@dataclass(frozen=True)
class TransferRecord:
    block_id: str
    nbytes: int
    clock_us: float


class Device:
    """One emulated accelerator and its state.

    A device is single-owner: callers serialize access to it.
    """

    def __init__(self, profile: Optional[DeviceProfile] = None, index: int = 0, strict: bool = False):
        self.profile = profile or DeviceProfile()
        self.index = index
        self.strict = strict
        self.blocks: "OrderedDict[str, QuantizedBlock]" = OrderedDict()
        self.used_bytes = 0
        self.clock_us = 0.0
        self.transfer_log: list[TransferRecord] = []
        self.exec_log: list[tuple[str, float]] = []
        self.saturation_events = 0
        self.overflow_events = 0

    # -- memory -----------------------------------------------------------

    def load(self, block_id: str, block: QuantizedBlock) -> None:
        old = self.blocks.get(block_id)
        new_used = self.used_bytes - (old.nbytes if old is not None else 0) + block.nbytes
        if new_used > self.profile.onchip_memory_bytes:
            raise DeviceMemoryFullError(
                f"device {self.index}: loading {block.nbytes} bytes as {block_id!r} needs "
                f"{new_used} of {self.profile.onchip_memory_bytes}"
            )
        self.blocks[block_id] = block
        self.blocks.move_to_end(block_id)
        self.used_bytes = new_used
        self.clock_us += self.profile.transfer_us(block.nbytes)
        self.transfer_log.append(TransferRecord(block_id, block.nbytes, self.clock_us))

    def evict(self, block_id: str) -> None:
        block = self.blocks.pop(block_id, None)
        if block is None:
            raise MissingOperandError(block_id)
        self.used_bytes -= block.nbytes

    def ensure_loaded(self, block_id: str, block: QuantizedBlock, pinned=()) -> bool:
        """Load unless resident, evicting least recently used blocks to make room.

        Returns True when a transfer happened.
        """
        if block_id in self.blocks:
            self.blocks.move_to_end(block_id)
            return False
        if block.nbytes > self.profile.onchip_memory_bytes:
            raise DeviceMemoryFullError(f"block {block_id!r} alone exceeds on-chip memory")
        for victim in list(self.blocks):
            if self.used_bytes + block.nbytes <= self.profile.onchip_memory_bytes:
                break
            if victim not in pinned:
                self.evict(victim)
        self.load(block_id, block)
        return True

    def load_count(self, block_id: str) -> int:
        return sum(1 for r in self.transfer_log if r.block_id == block_id)

    def advance_to(self, t_us: float) -> None:
        if t_us > self.clock_us:
            self.clock_us = t_us

    def _get(self, block_id: str) -> QuantizedBlock:
        try:
            block = self.blocks[block_id]
        except KeyError:
            raise MissingOperandError(f"device {self.index}: block {block_id!r} is not loaded") from None
        self.blocks.move_to_end(block_id)
        return block

    def _tick(self, kind: str, repeat: int) -> None:
        self.clock_us += repeat * self.profile.exec_us(kind)
        self.exec_log.append((kind, self.clock_us))

    # -- requantization ---------------------------------------------------

    def _requantize(self, real_scaled: np.ndarray, zp: int) -> np.ndarray:
        codes = round_half_away(real_scaled) + zp
        clipped = np.clip(codes, 0, 255)
        n_sat = int(np.count_nonzero(clipped != codes))
        if n_sat:
            self.saturation_events += n_sat
            if self.strict:
                raise SaturationError(f"device {self.index}: {n_sat} output codes saturated")
        return clipped.astype(np.uint8)

    def _check_accumulators(self, acc: np.ndarray, abs_bound: float, abs_sum=None) -> None:
        if abs_bound <= INT32_MAX:
            return
        worst = float(np.max(np.abs(acc))) if abs_sum is None else float(np.max(abs_sum()))
        if worst > INT32_MAX:
            self.overflow_events += 1
            if self.strict:
                raise SaturationError(f"device {self.index}: 32-bit accumulator overflow")

    def _finish_matrix(self, acc: np.ndarray, in_scale: float, bound: float, nonneg: bool, out_quant):
        s_out, zp_out = out_quant if out_quant is not None else output_quant_for_bound(bound, nonneg)
        codes = self._requantize(acc * (s_out / in_scale), zp_out)
        return QuantizedBlock(codes, s_out, zp_out)

    # -- instructions -----------------------------------------------------

    def exec_conv2d(self, input_id, kernel_id, stride=(1, 1), kernel_rows=None, out_quant=None, repeat=1):
        a = self._get(input_id)
        k = self._get(kernel_id)
        sx, sy = int(stride[0]), int(stride[1])
        if sx < 1 or sy < 1:
            raise InvalidShapeError(f"stride components must be >= 1, got {stride}")
        qa = a.centered()
        ks = split_kernels(k.centered(), kernel_rows)
        nk, lr, lc = ks.shape
        m, n = qa.shape
        if lr > m or lc > n:
            raise InvalidShapeError(f"kernel {lr}x{lc} larger than input {m}x{n}")
        out_r, out_c = conv_output_shape(m, n, (sx, sy))
        padded = np.zeros((out_r * sx + lr - 1, out_c * sy + lc - 1))
        padded[:m, :n] = qa  # zero padding == zero point after centering
        if (sx, sy) == (lr, lc):
            win = padded[: out_r * sx, : out_c * sy].reshape(out_r, lr, out_c, lc).transpose(0, 2, 1, 3)
        else:
            win = np.lib.stride_tricks.sliding_window_view(padded, (lr, lc))[::sx, ::sy][:out_r, :out_c]
        win2 = win.reshape(out_r * out_c, lr * lc)
        kmat = ks.reshape(nk, lr * lc).T
        acc = win2 @ kmat
        self._check_accumulators(
            acc,
            lr * lc * float(np.abs(qa).max(initial=0)) * float(np.abs(kmat).max(initial=0)),
            lambda: np.abs(win2) @ np.abs(kmat),
        )
        acc = acc.reshape(out_r, out_c, nk).transpose(0, 2, 1).reshape(out_r, nk * out_c)
        a_lo, a_hi = a.real_range()
        wsum = np.abs(ks).sum(axis=(1, 2)).max() / k.scale
        bound = float(np.abs(qa).max(initial=0)) / a.scale * wsum
        nonneg = a.zero_point == 0 and k.zero_point == 0
        out = self._finish_matrix(acc, a.scale * k.scale, bound, nonneg, out_quant)
        self._tick("conv2d", repeat)
        return out

    def exec_fully_connected(self, vector_id, model_id, out_quant=None, repeat=1):
        v = self._get(vector_id)
        w = self._get(model_id)
        if v.values.shape[1] != w.values.shape[0]:
            raise InvalidShapeError(
                f"fully_connected inner dimensions differ: {v.shape} x {w.shape}"
            )
        qv, qw = v.centered(), w.centered()
        acc = qv @ qw
        self._check_accumulators(
            acc,
            qv.shape[1] * float(np.abs(qv).max(initial=0)) * float(np.abs(qw).max(initial=0)),
            lambda: np.abs(qv) @ np.abs(qw),
        )
        bound = float(np.abs(qv).max(initial=0)) / v.scale * float(np.abs(qw).sum(axis=0).max()) / w.scale
        nonneg = v.zero_point == 0 and w.zero_point == 0
        out = self._finish_matrix(acc, v.scale * w.scale, bound, nonneg, out_quant)
        self._tick("fully_connected", repeat)
        return out

    def exec_pairwise(self, kind, a_id, b_id, out_quant=None, repeat=1):
        if kind not in PAIRWISE:
            raise UnsupportedOperationError(f"{kind} is not a pairwise instruction")
        a, b = self._get(a_id), self._get(b_id)
        if a.values.shape != b.values.shape:
            raise InvalidShapeError(f"pairwise operands differ in shape: {a.shape} vs {b.shape}")
        ra, rb = a.dequantize(), b.dequantize()
        if kind == "add":
            res = ra + rb
        elif kind == "sub":
            res = ra - rb
        else:
            res = ra * rb
        if out_quant is None:
            (alo, ahi), (blo, bhi) = a.real_range(), b.real_range()
            lo, hi = interval(kind, (alo, ahi), (blo, bhi))
            out_quant = output_quant_for_bound(max(abs(lo), abs(hi)), lo >= 0)
        s_out, zp_out = out_quant
        out = QuantizedBlock(self._requantize(res * s_out, zp_out), s_out, zp_out)
        self._tick(kind, repeat)
        return out

    def exec_reduce(self, kind, a_id, repeat=1):
        if kind not in REDUCE:
            raise UnsupportedOperationError(f"{kind} is not a reduction instruction")
        a = self._get(a_id)
        if kind == "max":
            code = np.array([[a.values.max()]], dtype=np.uint8)
        else:
            mean = a.centered().mean()
            code = self._requantize(np.array([[mean]]), a.zero_point)
        self._tick(kind, repeat)
        return QuantizedBlock(code, a.scale, a.zero_point)

    def exec_activation(self, kind, a_id, out_quant=None, repeat=1):
        if kind not in ACTIVATION:
            raise UnsupportedOperationError(f"{kind} is not an activation instruction")
        a = self._get(a_id)
        if kind == "relu" and out_quant is None:
            codes = np.maximum(a.values, np.uint8(a.zero_point))
            out = QuantizedBlock(codes, a.scale, a.zero_point)
        else:
            s_out, zp_out = out_quant if out_quant is not None else (a.scale, a.zero_point)
            real = a.dequantize()
            res = np.tanh(real) if kind == "tanh" else np.maximum(real, 0.0)
            out = QuantizedBlock(self._requantize(res * s_out, zp_out), s_out, zp_out)
        self._tick(kind, repeat)
        return out

    def exec_reshape(self, kind, a_id, window_or_target, repeat=1):
        a = self._get(a_id)
        m, n = a.values.shape
        if kind == "crop":
            r0, r1, c0, c1 = (int(x) for x in window_or_target)
            if not (0 <= r0 < r1 <= m and 0 <= c0 < c1 <= n):
                raise InvalidShapeError(f"crop window {window_or_target} outside {m}x{n}")
            codes = a.values[r0:r1, c0:c1]
        elif kind == "ext":
            tr, tc = (int(x) for x in window_or_target)
            if tr < m or tc < n:
                raise InvalidShapeError(f"ext target {tr}x{tc} smaller than {m}x{n}")
            codes = np.full((tr, tc), a.zero_point, dtype=np.uint8)
            codes[:m, :n] = a.values
        else:
            raise UnsupportedOperationError(f"{kind} is not a reshape instruction")
        self._tick(kind, repeat)
        return QuantizedBlock(codes.copy(), a.scale, a.zero_point)

    def execute(self, instr: Instruction, repeat: int = 1) -> QuantizedBlock:
        """Run one instruction; ``repeat`` re-issues it on the same operands."""
        op, ids, oq = instr.op, instr.operands, instr.out_quant
        k = op.kind
        if k == "conv2d":
            return self.exec_conv2d(ids[0], ids[1], op.stride, op.kernel_rows, oq, repeat)
        if k == "fully_connected":
            return self.exec_fully_connected(ids[0], ids[1], oq, repeat)
        if k in PAIRWISE:
            return self.exec_pairwise(k, ids[0], ids[1], oq, repeat)
        if k in REDUCE:
            return self.exec_reduce(k, ids[0], repeat)
        if k in ACTIVATION:
            return self.exec_activation(k, ids[0], oq, repeat)
        if k in RESHAPE:
            return self.exec_reshape(k, ids[0], op.window if k == "crop" else op.target, repeat)
        raise UnsupportedOperationError(k)

    def charge(self, kind: str, repeat: int = 1) -> None:
        """Advance the clock for an instruction whose result is computed elsewhere."""
        self._tick(kind, repeat)


def interval(kind: str, a: tuple, b: tuple) -> tuple[float, float]:
    """Exact output interval of a pairwise op over operand intervals."""
    (alo, ahi), (blo, bhi) = a, b
    if kind == "add":
        return (alo + blo, ahi + bhi)
    if kind == "sub":
        return (alo - bhi, ahi - blo)
    prods = (alo * blo, alo * bhi, ahi * blo, ahi * bhi)
    return (min(prods), max(prods))
