"""Operation descriptors shared by the oracle, the Tensorizer and the runtime."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .errors import InvalidInputError, UnsupportedOperationError

PAIRWISE = ("add", "sub", "mul")
REDUCE = ("mean", "max")
ACTIVATION = ("tanh", "relu")
RESHAPE = ("crop", "ext")
MATRIX = ("conv2d", "fully_connected")

# instruction kinds the emulated device executes natively
DEVICE_KINDS = MATRIX + PAIRWISE + RESHAPE + REDUCE + ACTIVATION
# kinds a programmer may request; gemm is lowered onto strided conv2d
HOST_KINDS = DEVICE_KINDS + ("gemm",)

_ARITY = {k: 2 for k in MATRIX + PAIRWISE + ("gemm",)}
_ARITY.update({k: 1 for k in REDUCE + ACTIVATION + RESHAPE})


def normalize_kind(kind: str) -> str:
    k = str(kind).lower()
    if k == "fullyconnected":
        k = "fully_connected"
    if k not in HOST_KINDS:
        raise UnsupportedOperationError(f"unsupported operation {kind!r}")
    return k


@dataclass(frozen=True)
class OpDescriptor:
    """What to compute, minus the operands.

    ``window`` is a half-open ``(row0, row1, col0, col1)`` crop box. ``kernel_rows``
    marks a conv2d kernel operand as a vertical stack of kernels of that height.
    """

    kind: str
    stride: tuple[int, int] = (1, 1)
    kernel_rows: Optional[int] = None
    window: Optional[tuple[int, int, int, int]] = None
    target: Optional[tuple[int, int]] = None

    def __post_init__(self):
        kind = normalize_kind(self.kind)
        object.__setattr__(self, "kind", kind)
        sx, sy = self.stride
        if int(sx) < 1 or int(sy) < 1:
            raise InvalidInputError(f"stride components must be >= 1, got {self.stride}")
        object.__setattr__(self, "stride", (int(sx), int(sy)))
        if kind == "crop" and self.window is None:
            raise InvalidInputError("crop needs a window")
        if kind == "ext" and self.target is None:
            raise InvalidInputError("ext needs a target shape")

    @property
    def arity(self) -> int:
        return _ARITY[self.kind]


def op(kind: str, **params) -> OpDescriptor:
    return OpDescriptor(kind, **params)
