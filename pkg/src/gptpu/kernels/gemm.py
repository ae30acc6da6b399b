"""GEMM on the device through one strided conv2D per tile."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..errors import InvalidInputError
from ..gemmconv import GemmPlan, column_kernels, gemm_via_conv, stack_rows
from ..runtime import Runtime
from ..tensor import HostTensor
from ..tensorizer import QuantFlags
from ._common import as_matrix, row_bands, run_tasks, runtime_scope

__all__ = ["GemmPlan", "column_kernels", "gemm_via_conv", "stack_rows", "tpu_gemm"]


def tpu_gemm(a, b, runtime: Optional[Runtime] = None, flags: Optional[QuantFlags] = None) -> HostTensor:
    """``a @ b`` computed by the device.

    Each 128-row band of ``a`` runs as its own task. The Tensorizer splits a
    band's product into 128-blocks; each block pair runs as one conv2D over the
    stacked rows of ``a`` with one kernel per column of ``b``, and the host
    sums the partial products.
    """
    a = as_matrix(a, "A")
    b = as_matrix(b, "B")
    if a.shape[1] != b.shape[0]:
        raise InvalidInputError(f"gemm shape mismatch: {a.shape} x {b.shape}")
    with runtime_scope(runtime) as rt:
        bb = rt.buffer(b)
        bands = row_bands(a.shape[0], rt.profile.arith_tile)
        jobs = [(rt.buffer(a[r0:r1]), rt.empty(r1 - r0, b.shape[1])) for r0, r1 in bands]

        def task(ab, out):
            rt.invoke_operator("gemm", flags, [ab, bb], out)
            return out.numpy()

        parts = run_tasks(rt, task, jobs)
    return HostTensor(np.vstack(parts))
