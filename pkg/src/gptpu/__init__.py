"""Software emulation of an 8-bit matrix accelerator and its offload stack."""

from .device import Device, DeviceProfile, Instruction, QuantizedBlock
from .errors import *  # noqa: F401,F403
from .ops import OpDescriptor, op
from .oracle import oracle_execute
from .tensor import ErrorReport, HostTensor, RangeStats, TensorShape, error_report, mape, range_stats, rmse_normalized
from .tensorizer import InstructionProgram, QuantFlags, QuantParams, lower, quantize, dequantize, scale_factor
from .runtime import Runtime

__version__ = "0.1.0"
