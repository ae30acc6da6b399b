import numpy as np
import pytest
from scipy.special import ndtr

from gptpu import datasets, mape
from gptpu.errors import InvalidInputError, SingularMatrixError
from gptpu.kernels import (
    ALLOWED_INSTRUCTIONS,
    Network,
    backprop,
    blackscholes,
    cndf,
    gaussian,
    hotspot3d,
    init_network,
    lud,
    pagerank,
    tpu_gemm,
)
from gptpu.kernels import reference as ref
from gptpu.kernels.blackscholes import CALL, CNDF_CODES, CNDF_STEP, PUT
from gptpu.kernels.hotspot3d import AMB_TEMP, coefficients
from gptpu.oracle import conv2d
from gptpu.runtime import Runtime


def used(rt):
    return set(rt.instruction_counts())


# -- gemm


def test_gemm_identity_and_hand_example():
    b = np.array([[5.0, 6.0], [7.0, 8.0]])
    np.testing.assert_allclose(tpu_gemm(np.eye(2), b).data, b, atol=8 / 255)
    np.testing.assert_allclose(tpu_gemm([[1, 2], [3, 4]], b).data, [[19, 22], [43, 50]], atol=0.5)


def test_gemm_integer_inputs_are_exact():
    a = np.arange(12.0).reshape(3, 4)
    b = np.arange(8.0).reshape(4, 2)
    assert np.array_equal(tpu_gemm(a, b).data, a @ b)


def test_gemm_256_accuracy_and_trace():
    a, b = datasets.gemm_inputs(256, seed=3)
    with Runtime() as rt:
        c = tpu_gemm(a, b, runtime=rt).data
        assert used(rt) <= ALLOWED_INSTRUCTIONS["gemm"]
    assert mape(a @ b, c) < 0.01


def test_gemm_shape_mismatch():
    with pytest.raises(InvalidInputError):
        tpu_gemm(np.ones((2, 3)), np.ones((2, 3)))


# -- pagerank


def test_pagerank_symmetric_pair():
    np.testing.assert_allclose(pagerank([[0, 1], [1, 0]]), [0.5, 0.5], atol=1e-3)


def test_pagerank_star_centre_highest():
    star = np.zeros((4, 4))
    star[0, 1:] = star[1:, 0] = 1
    r = pagerank(star)
    assert np.argmax(r) == 0
    np.testing.assert_allclose(r, ref.pagerank_ref(star), rtol=0.02)


def test_pagerank_zero_iterations_uniform():
    np.testing.assert_array_equal(pagerank(np.ones((5, 5)), iterations=0), np.full(5, 0.2))


def test_pagerank_errors():
    with pytest.raises(InvalidInputError):
        pagerank(np.ones((2, 3)))
    with pytest.raises(InvalidInputError):
        pagerank(np.ones((2, 2)), iterations=-1)


def test_pagerank_float64_power_method():
    g = datasets.random_graph(64, seed=1)
    m = np.where(g.sum(axis=0) > 0, g / np.maximum(g.sum(axis=0), 1), 1 / 64)
    x = np.full(64, 1 / 64)
    for _ in range(20):
        x = 0.85 * m @ x + 0.15 / 64
        x /= x.sum()
    np.testing.assert_allclose(ref.pagerank_ref(g), x, rtol=1e-12)
    with Runtime() as rt:
        assert mape(x[None], pagerank(g, runtime=rt)[None]) < 0.01
        assert used(rt) <= ALLOWED_INSTRUCTIONS["pagerank"]


# -- hotspot3d


def stencil_loop(t, p, c):
    # one step, written element by element with replicated borders
    layers, rows, cols = t.shape
    out = np.empty_like(t)
    for z in range(layers):
        for i in range(rows):
            for j in range(cols):
                n, s = t[z, max(i - 1, 0), j], t[z, min(i + 1, rows - 1), j]
                w, e = t[z, i, max(j - 1, 0)], t[z, i, min(j + 1, cols - 1)]
                top, bot = t[min(z + 1, layers - 1), i, j], t[max(z - 1, 0), i, j]
                out[z, i, j] = (
                    c.cc * t[z, i, j] + c.cn * n + c.cs * s + c.ce * e + c.cw * w
                    + c.ct * top + c.cb * bot + c.step_div_cap * p[z, i, j] + c.ct * c.amb
                )
    return out


def test_hotspot_reference_matches_loop(rng):
    t, p = rng.uniform(320, 340, (3, 6, 7)), rng.uniform(0, 0.01, (3, 6, 7))
    c = coefficients(6, 7, 3)
    np.testing.assert_allclose(ref.hotspot3d_ref(t, p, 1, c), stencil_loop(t, p, c), rtol=1e-12)


def test_hotspot_ambient_fixed_point():
    t = np.full((2, 16, 16), AMB_TEMP)
    out = hotspot3d(t, np.zeros_like(t), steps=3)
    np.testing.assert_allclose(out, t, atol=1e-9)


def test_hotspot_single_hot_cell_diffuses():
    t = np.full((1, 9, 9), AMB_TEMP)
    t[0, 4, 4] = AMB_TEMP + 50
    p = np.zeros_like(t)
    c = coefficients(9, 9, 1)
    out = hotspot3d(t, p, steps=1)
    want = stencil_loop(t, p, c)
    np.testing.assert_allclose(out, want, atol=50 * 0.01)
    assert out[0, 3, 4] > AMB_TEMP and out[0, 4, 4] < AMB_TEMP + 50


def test_hotspot_in_plane_part_is_one_conv(rng):
    t = rng.uniform(320, 340, (12, 10))
    c = coefficients(12, 10, 1)
    halo = np.pad(t, 1, mode="edge")
    in_plane = conv2d(halo, c.kernel())[:12, :10]
    zero_vertical = ref.hotspot3d_ref(t[None], np.zeros((1, 12, 10)), 1, c)[0]
    np.testing.assert_allclose(in_plane + c.ct * t + c.cb * t + c.ct * c.amb, zero_vertical, rtol=1e-12)


def test_hotspot_accuracy_and_trace():
    t, p = datasets.hotspot_inputs(128, layers=2, seed=0)
    with Runtime(devices=2) as rt:
        out = hotspot3d(t, p, steps=2, runtime=rt)
        assert used(rt) <= ALLOWED_INSTRUCTIONS["hotspot3d"]
    assert mape(ref.hotspot3d_ref(t, p, 2).reshape(-1, 128), out.reshape(-1, 128)) < 0.001


def test_hotspot_errors():
    with pytest.raises(InvalidInputError):
        hotspot3d(np.ones((2, 2)), np.ones((2, 2)))
    with pytest.raises(InvalidInputError):
        hotspot3d(np.ones((4, 4)), np.ones((4, 5)))


# -- lud


def test_lud_identity_and_diagonal():
    l, u = lud(np.eye(5))
    assert np.array_equal(l, np.eye(5)) and np.array_equal(u, np.eye(5))
    l, u = lud(np.diag([2.0, 3.0]))
    assert np.array_equal(l, np.eye(2)) and np.array_equal(u, np.diag([2.0, 3.0]))


def test_lud_integer_8x8_exact():
    a, l0, u0 = datasets.unit_lu_integer_matrix(8, seed=4)
    with Runtime() as rt:
        l, u = lud(a, runtime=rt)
        assert used(rt) <= ALLOWED_INSTRUCTIONS["lud"]
    assert np.array_equal(l @ u, a)
    assert np.array_equal(l, l0) and np.array_equal(u, u0)


def test_lud_random_well_conditioned(rng):
    a = rng.uniform(-1, 1, (24, 24)) + 24 * np.eye(24)
    l, u = lud(a)
    rl, ru = ref.lud_ref(a)
    assert np.allclose(l, np.tril(l)) and np.allclose(np.diag(l), 1)
    assert np.abs(l @ u - a).max() < 0.1
    assert np.linalg.norm(l @ u - a) / np.linalg.norm(a) < 0.01
    np.testing.assert_allclose(rl @ ru, a, atol=1e-12)


def test_lud_uses_gemm_for_large_trailing_blocks():
    a, _, _ = datasets.unit_lu_integer_matrix(20, seed=1)
    with Runtime() as rt:
        lud(a, runtime=rt)
        counts = rt.instruction_counts()
    assert counts.get("conv2d", 0) > 0 and counts.get("fully_connected", 0) > 0


def test_lud_zero_pivot():
    with pytest.raises(SingularMatrixError):
        lud([[0.0, 1.0], [1.0, 0.0]])


# -- gaussian


def test_gaussian_small_systems():
    b = np.array([3.0, -1.0, 2.0])
    np.testing.assert_array_equal(gaussian(np.eye(3), b), b)
    np.testing.assert_allclose(gaussian([[2.0, 0.0], [0.0, 4.0]], [2.0, 8.0]), [1.0, 2.0])


def test_gaussian_diagonally_dominant(rng):
    a = rng.uniform(-1, 1, (8, 8))
    a += np.diag(np.abs(a).sum(axis=1) + 1)
    b = rng.uniform(-1, 1, 8)
    with Runtime() as rt:
        x = gaussian(a, b, runtime=rt)
        assert used(rt) <= ALLOWED_INSTRUCTIONS["gaussian"]
    np.testing.assert_allclose(x, ref.gaussian_ref(a, b), atol=0.02)
    np.testing.assert_allclose(ref.gaussian_ref(a, b), np.linalg.solve(a, b), rtol=1e-10)


def test_gaussian_integer_exact():
    a, b, x = datasets.gaussian_inputs(32, seed=2)
    assert np.array_equal(gaussian(a, b), x)


def test_gaussian_errors():
    with pytest.raises(SingularMatrixError):
        gaussian([[0.0, 1.0], [1.0, 1.0]], [1.0, 1.0])
    with pytest.raises(InvalidInputError):
        gaussian(np.eye(3), np.ones(2))


# -- backprop


def test_backprop_zero_rate_keeps_weights():
    net = init_network((6, 5, 2), seed=0)
    res = backprop(net, np.ones((3, 6)), np.zeros((3, 2)), rate=0.0, momentum=0.0)
    for w0, w1 in zip(net.weights, res.network.weights):
        assert np.array_equal(w0, w1)


def test_backprop_zero_input_updates_only_bias_path():
    net = init_network((4, 3, 1), seed=1)
    res = backprop(net, np.zeros((2, 4)), np.ones((2, 1)), momentum=0.0)
    assert np.array_equal(res.network.weights[0], net.weights[0])
    assert not np.array_equal(res.network.biases[0], net.biases[0])


def test_backprop_reference_gradient_by_finite_differences(rng):
    net = init_network((2, 2, 1), seed=3)
    x, y = rng.uniform(0, 1, (1, 2)), np.array([[0.3]])

    def loss(n):
        h = x
        for w, b in zip(n.weights, n.biases):
            h = 1 / (1 + np.exp(-(h @ w + b)))
        return 0.5 * float(np.sum((y - h) ** 2))

    rate = 1e-3
    step = ref.backprop_ref(net, x, y, rate=rate, momentum=0.0)
    for i, w in enumerate(net.weights):
        for idx in np.ndindex(w.shape):
            plus, minus = net.copy(), net.copy()
            plus.weights[i][idx] += 1e-6
            minus.weights[i][idx] -= 1e-6
            grad = (loss(plus) - loss(minus)) / 2e-6
            dw = step.network.weights[i][idx] - w[idx]
            assert dw == pytest.approx(-rate * grad, rel=1e-5, abs=1e-12)


def test_backprop_2_2_1_matches_reference():
    net = init_network((2, 2, 1), seed=5)
    x, y = np.array([[0.2, 0.9]]), np.array([[1.0]])
    with Runtime() as rt:
        got = backprop(net, x, y, runtime=rt)
        assert used(rt) <= ALLOWED_INSTRUCTIONS["backprop"]
    want = ref.backprop_ref(net, x, y)
    np.testing.assert_allclose(got.network.flat(), want.network.flat(), atol=0.01)


def test_backprop_shape_errors():
    net = init_network((3, 2, 1), seed=0)
    with pytest.raises(InvalidInputError):
        backprop(net, np.ones((2, 4)), np.ones((2, 1)))
    with pytest.raises(InvalidInputError):
        backprop(net, np.ones((2, 3)), np.ones((3, 1)))
    assert isinstance(net.copy(), Network)


# -- blackscholes


def option(spot, strike, rate=0.02, vol=0.3, t=1.0, kind=CALL):
    return [spot, strike, rate, 0.0, vol, t, kind, 0.0, 0.0]


def test_cndf_midpoint_and_accuracy():
    assert cndf([0.0])[0] == pytest.approx(0.5, abs=1e-4)
    x = np.linspace(-6, 6, 2001)
    assert np.abs(cndf(x) - ndtr(x)).max() < 1e-4


def test_cndf_coefficients_on_8bit_grid():
    assert max(CNDF_CODES) == 255
    from gptpu.tensorizer import input_params, quantize
    from gptpu.tensor import range_stats

    col = np.array(CNDF_CODES, dtype=float)[:, None] * CNDF_STEP
    block = quantize(col, input_params(range_stats(col)))
    np.testing.assert_allclose(block.dequantize(), col, rtol=1e-12, atol=1e-15)


def test_deep_in_the_money_call():
    s, k, r, t = 500.0, 100.0, 0.05, 0.1
    p = blackscholes([option(s, k, r, 0.2, t)])[0]
    assert p == pytest.approx(s - k * np.exp(-r * t), rel=1e-3)


def test_put_call_parity_and_batch_accuracy():
    opts = datasets.option_batch(1000, seed=9)
    with Runtime() as rt:
        got = blackscholes(opts, runtime=rt)
        assert used(rt) <= ALLOWED_INSTRUCTIONS["blackscholes"]
    assert mape(ref.blackscholes_ref(opts)[None], got[None]) <= 0.005
    calls = opts.copy()
    calls[:, 6] = CALL
    puts = opts.copy()
    puts[:, 6] = PUT
    c, p = ref.blackscholes_ref(calls), ref.blackscholes_ref(puts)
    s, k, r, t = opts[:, 0], opts[:, 1], opts[:, 2], opts[:, 5]
    np.testing.assert_allclose(c - p, s - k * np.exp(-r * t), atol=1e-9)


def test_blackscholes_invalid():
    with pytest.raises(InvalidInputError):
        blackscholes([option(-1.0, 100.0)])
    with pytest.raises(InvalidInputError):
        blackscholes([option(100.0, 100.0, kind=3)])
    with pytest.raises(InvalidInputError):
        blackscholes(np.ones((2, 5)))
