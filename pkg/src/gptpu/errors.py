"""Exception hierarchy shared by every layer of the emulator stack."""


class GptpuError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(GptpuError, ValueError):
    pass


class DegenerateRangeError(GptpuError, ValueError):
    """Normalized RMSE requested against a constant reference that differs from the approximation."""


class InvalidShapeError(GptpuError, ValueError):
    pass


class MissingOperandError(GptpuError, KeyError):
    pass


class DeviceMemoryFullError(GptpuError):
    pass


class SaturationError(GptpuError):
    """Raised in strict mode when requantization clamps a code or an accumulator overflows."""


class MalformedBlobError(GptpuError, ValueError):
    pass


class UnsupportedOperationError(GptpuError, ValueError):
    pass


class SingularMatrixError(GptpuError, ArithmeticError):
    pass


class UsageError(GptpuError, RuntimeError):
    pass


class BufferAliasError(UsageError):
    pass


class TaskFailedError(GptpuError):
    pass


class PlanningError(GptpuError, ValueError):
    pass
