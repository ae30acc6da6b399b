import numpy as np
import pytest

from gptpu import op, oracle_execute
from gptpu.errors import InvalidInputError, InvalidShapeError
from gptpu.oracle import centered_conv2d, centered_via_anchored, conv2d, rotate_kernel


def run(kind, *inputs, **params):
    return oracle_execute(op(kind, **params), inputs).data


def test_gemm_identity_and_hand_example():
    b = np.array([[5.0, 6.0], [7.0, 8.0]])
    assert np.array_equal(run("gemm", np.eye(2), b), b)
    assert np.array_equal(run("gemm", [[1, 2], [3, 4]], b), [[19, 22], [43, 50]])


def test_gemm_associative_on_integers(rng):
    a, b, c = (rng.integers(-9, 10, (8, 8)).astype(float) for _ in range(3))
    left = run("gemm", run("gemm", a, b), c)
    right = run("gemm", a, run("gemm", b, c))
    np.testing.assert_allclose(left, right, rtol=1e-9)


def test_conv2d_zero_kernel(rng):
    out = run("conv2d", rng.normal(size=(5, 6)), np.zeros((3, 3)))
    assert not out.any()


def test_conv2d_one_hot_identity(rng):
    a = rng.normal(size=(7, 5))
    k = np.zeros((3, 3))
    k[0, 0] = 1
    assert np.array_equal(run("conv2d", a, k), a)


def test_conv2d_strided_ones():
    out = run("conv2d", np.ones((9, 9)), np.ones((3, 3)), stride=(3, 3))
    assert out.shape == (3, 3) and np.all(out == 9)


def test_conv2d_matches_scalar_loop(rng):
    a, k = rng.normal(size=(6, 7)), rng.normal(size=(2, 3))
    sx, sy = 2, 3
    out = run("conv2d", a, k, stride=(sx, sy))
    assert out.shape == (3, 3)
    for i in range(3):
        for j in range(3):
            acc = 0.0
            for p in range(2):
                for q in range(3):
                    r, c = i * sx + p, j * sy + q
                    if r < 6 and c < 7:
                        acc += a[r, c] * k[p, q]
            assert out[i, j] == pytest.approx(acc)


def test_conv2d_stacked_kernels_side_by_side(rng):
    a = rng.normal(size=(4, 4))
    k1, k2 = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
    out = conv2d(a, np.vstack([k1, k2]), kernel_rows=2)
    np.testing.assert_allclose(out, np.hstack([conv2d(a, k1), conv2d(a, k2)]))


def test_rotated_centered_variant_via_anchored(rng):
    a, k = rng.normal(size=(6, 6)), rng.normal(size=(3, 3))
    np.testing.assert_allclose(centered_via_anchored(a, k), centered_conv2d(a, k))
    assert np.array_equal(rotate_kernel(rotate_kernel(k)), k)


def test_pairwise_reduce_activation():
    a = np.array([[1.0, 5.0], [3.0, -2.0]])
    assert np.array_equal(run("add", a, a), 2 * a)
    assert np.array_equal(run("sub", a, a), np.zeros((2, 2)))
    assert np.array_equal(run("mul", [[2, 3]], [[4, 5]]), [[8, 15]])
    assert run("max", a)[0, 0] == 5
    assert run("mean", a)[0, 0] == pytest.approx(1.75)
    assert np.array_equal(run("relu", a), np.maximum(a, 0))
    np.testing.assert_allclose(run("tanh", a), np.tanh(a))


def test_crop_and_ext():
    assert np.array_equal(run("crop", [[1, 2], [3, 4]], window=(1, 2, 0, 1)), [[3]])
    out = run("ext", [[1, 2]], target=(2, 3))
    assert np.array_equal(out, [[1, 2, 0], [0, 0, 0]])


def test_shape_errors():
    with pytest.raises(InvalidShapeError):
        run("add", np.ones((2, 2)), np.ones((2, 3)))
    with pytest.raises((InvalidShapeError, InvalidInputError)):
        run("gemm", np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(InvalidShapeError):
        run("conv2d", np.ones((2, 2)), np.ones((3, 3)))
    with pytest.raises(InvalidInputError):
        oracle_execute(op("add"), [np.ones((2, 2))])
