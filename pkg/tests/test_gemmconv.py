import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gptpu.errors import InvalidInputError
from gptpu.gemmconv import GemmPlan, column_kernels, gemm_via_conv, stack_rows


def test_plan_geometry():
    p = GemmPlan(3, 10, 7)
    assert p.s == 4 and p.s**2 >= 10
    assert p.stride == (4, 4)
    assert p.input_shape == (12, 4)
    assert p.kernel_stack_shape == (28, 4)
    assert p.kernel_count == 7
    assert GemmPlan(1, 1, 1).s == 1
    assert GemmPlan(1, 16, 1).s == 4 and GemmPlan(1, 17, 1).s == 5
    with pytest.raises(InvalidInputError):
        GemmPlan(0, 1, 1)


def test_layouts_hold_exact_zeros():
    a = np.arange(1, 6.0).reshape(1, 5)
    st_ = stack_rows(a, 3)
    assert np.array_equal(st_, [[1, 2, 3], [4, 5, 0], [0, 0, 0]])
    k = column_kernels(np.arange(1, 6.0).reshape(5, 1), 3)
    assert np.array_equal(k, st_)


def test_identity_and_hand_example():
    b = np.array([[5.0, 6.0], [7.0, 8.0]])
    np.testing.assert_array_equal(gemm_via_conv(np.eye(2), b), b)
    np.testing.assert_array_equal(gemm_via_conv([[1, 2], [3, 4]], b), [[19, 22], [43, 50]])


def test_shape_mismatch():
    with pytest.raises(InvalidInputError):
        gemm_via_conv(np.ones((2, 3)), np.ones((2, 3)))


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(list(range(1, 17)) + [64]), st.sampled_from(list(range(1, 17)) + [64]),
       st.sampled_from(list(range(1, 17)) + [64]), st.integers(0, 2**31))
def test_construction_equals_direct_gemm(m, n, k, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(m, n)), rng.normal(size=(n, k))
    ref = a @ b
    assert np.abs(gemm_via_conv(a, b) - ref).max() <= 1e-9 * max(1.0, np.abs(ref).max())
