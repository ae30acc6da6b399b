import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gptpu import HostTensor, RangeStats, TensorShape, error_report, mape, range_stats, rmse_normalized
from gptpu.errors import DegenerateRangeError, InvalidInputError
from gptpu.tensor import auto_range_stats

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def test_shape_invariants():
    s = TensorShape(3, 4)
    assert s.size == 12
    with pytest.raises(InvalidInputError):
        TensorShape(0, 4)


def test_host_tensor_rejects_nonfinite_and_rank3():
    with pytest.raises(InvalidInputError):
        HostTensor([[1.0, float("nan")]])
    with pytest.raises(InvalidInputError):
        HostTensor(np.zeros((2, 2, 2)))


def test_range_stats_exact():
    r = range_stats(HostTensor([[1, 2], [3, 4]]))
    assert (r.min, r.max, r.sampled) == (1, 4, False)


def test_range_stats_constant():
    r = range_stats(np.full((3, 5), 2.5))
    assert r.min == r.max == 2.5


def test_range_stats_sampled_is_seeded_and_inside_full_range(rng):
    t = rng.uniform(0, 128, (1, 1000))
    full = range_stats(t)
    a = range_stats(t, 0.1, seed=5)
    b = range_stats(t, 0.1, seed=5)
    assert a == b and a.sampled
    assert full.min <= a.min <= a.max <= full.max
    assert 0 <= a.min and a.max < 128


def test_range_stats_errors():
    with pytest.raises(InvalidInputError):
        range_stats(np.zeros((0, 3)))
    with pytest.raises(InvalidInputError):
        range_stats(np.ones((2, 2)), 0.0)


def test_auto_range_stats_small_tensor_is_exact(rng):
    t = rng.normal(size=(64, 64))
    assert not auto_range_stats(t).sampled


@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12)), elements=finite))
def test_range_stats_full_matches_brute_force(a):
    r = range_stats(a)
    lo = hi = a.flat[0]
    for v in a.flat:
        lo, hi = min(lo, v), max(hi, v)
    assert (r.min, r.max) == (lo, hi)


def test_mape_examples():
    assert mape([[100.0]], [[99.0]], 1e-12) == pytest.approx(0.01)
    t = np.arange(6.0).reshape(2, 3)
    assert mape(t, t) == 0.0


def test_mape_matches_scalar_loop(rng):
    ref, app = rng.normal(size=(8, 8)), rng.normal(size=(8, 8))
    total = 0.0
    for i in range(8):
        for j in range(8):
            total += abs(app[i, j] - ref[i, j]) / max(abs(ref[i, j]), 1e-9)
    assert mape(ref, app) == pytest.approx(total / 64, rel=1e-12)


def test_mape_epsilon_floor():
    assert mape([[0.0]], [[1e-9]]) == pytest.approx(1.0)


def test_rmse_examples():
    assert rmse_normalized([[0.0], [10.0]], [[1.0], [9.0]]) == pytest.approx(0.1)
    assert rmse_normalized([[3.0, 3.0]], [[3.0, 3.0]]) == 0.0
    with pytest.raises(DegenerateRangeError):
        rmse_normalized([[3.0, 3.0]], [[3.0, 4.0]])


def test_rmse_matches_scalar_loop(rng):
    ref, app = rng.normal(size=(16, 16)), rng.normal(size=(16, 16))
    sq = sum((app[i, j] - ref[i, j]) ** 2 for i in range(16) for j in range(16))
    span = ref.max() - ref.min()
    assert rmse_normalized(ref, app) == pytest.approx(math.sqrt(sq / 256) / span, rel=1e-12)


def test_metric_shape_mismatch():
    with pytest.raises(InvalidInputError):
        mape(np.ones((2, 2)), np.ones((2, 3)))
    with pytest.raises(InvalidInputError):
        rmse_normalized(np.ones((2, 2)), np.ones((3, 2)))


@settings(max_examples=50)
@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 8)), elements=finite))
def test_metrics_vanish_on_identity(a):
    assert mape(a, a) == 0.0
    assert rmse_normalized(a, a) == 0.0


def test_error_report_fields(rng):
    ref = rng.normal(size=(4, 5))
    rep = error_report(ref, ref + 0.5)
    assert rep.count == 20
    assert rep.max_abs_error == pytest.approx(0.5)
    assert min(rep.as_dict().values()) >= 0


def test_range_stats_rejects_inverted():
    with pytest.raises(InvalidInputError):
        RangeStats(2.0, 1.0)
