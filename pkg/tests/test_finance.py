import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from randomhorizon.finance import (
    indifference_price,
    normalize_levels,
    optimal_strategy,
    simulate_wealth,
    sweep,
    value_function,
    write_strategy_csv,
    write_sweep_csv,
    write_wealth_csv,
)
from randomhorizon.model import ClaimSpec, ConstraintSet

TIMES = np.linspace(0.0, 1.0, 51)


@pytest.mark.parametrize(
    "x, y0, alpha, expected",
    [
        (0.7, 0.7, 0.25, -1.0),
        (1.0, 2.40391, 0.25, -math.exp(0.25 * 1.40391)),
        (1.0, -0.519817, 0.25, -math.exp(-0.25 * 1.519817)),
    ],
)
def test_value_function(x, y0, alpha, expected):
    assert value_function(x, y0, alpha) == pytest.approx(expected, rel=1e-12)


def test_value_function_reference_digits():
    assert value_function(1.0, 2.40391, 0.25) == pytest.approx(-1.4205, abs=5e-5)
    assert value_function(1.0, -0.519817, 0.25) == pytest.approx(-0.6838, abs=1e-4)
    with pytest.raises(ValueError):
        value_function(1.0, 0.0, 0.0)


@settings(max_examples=100, deadline=None)
@given(x=st.floats(-5, 5), y0=st.floats(-5, 5), dx=st.floats(1e-3, 2), alpha=st.floats(0.05, 3))
def test_value_function_monotone(x, y0, dx, alpha):
    v = value_function(x, y0, alpha)
    assert v < 0
    assert value_function(x + dx, y0, alpha) > v
    assert value_function(x, y0 + dx, alpha) < v


def test_strategy_unconstrained_and_after_default():
    z = np.zeros(50)
    p = optimal_strategy(z, (1.0,), 0.25, ConstraintSet(), 0.5, TIMES)
    assert np.all(p[TIMES[:-1] <= 0.5] == 4.0)
    assert np.all(p[TIMES[:-1] > 0.5] == 0.0)


def test_strategy_box_clamp():
    p = optimal_strategy(np.zeros(50), (1.0,), 0.25, ConstraintSet.box([-1.0], [1.0]), 1.0, TIMES)
    assert np.all(p == 1.0)


def test_strategy_vector_shape():
    z = np.zeros((50, 2))
    p = optimal_strategy(z, (1.0, 0.5), 0.5, ConstraintSet.box([0, 0], [1, 5]), 0.2, TIMES)
    assert p.shape == (50, 2)
    np.testing.assert_array_equal(p[0], [1.0, 1.0])
    assert np.all(p[TIMES[:-1] > 0.2] == 0.0)


def test_wealth_zero_strategy():
    dW = np.random.default_rng(0).standard_normal(50) * 0.1
    np.testing.assert_array_equal(simulate_wealth(np.zeros(50), dW, (1.0,), 0.02, x=3.0), np.full(51, 3.0))


def test_wealth_pure_integral():
    dW = np.random.default_rng(1).standard_normal(50) * math.sqrt(0.02)
    W = np.concatenate([[0.0], np.cumsum(dW)])
    np.testing.assert_allclose(simulate_wealth(np.ones(50), dW, (0.0,), 0.02, x=1.0), 1.0 + W, atol=1e-14)


def test_wealth_constant_after_default():
    p = optimal_strategy(np.zeros(50), (1.0,), 0.25, ConstraintSet(), 0.3, TIMES)
    dW = np.random.default_rng(2).standard_normal(50) * math.sqrt(0.02)
    X = simulate_wealth(p, dW, (1.0,), 0.02)
    k = int(np.searchsorted(TIMES, 0.3, side="right"))
    assert np.all(X[k:] == X[k])


def test_expected_terminal_wealth(small_ensemble):
    c, theta, dt = 2.0, 1.0, small_ensemble.times[1]
    X_T = np.array([simulate_wealth(np.full(small_ensemble.n_steps, c), dw, (theta,), dt)[-1] for dw in small_ensemble.dW])
    se = X_T.std(ddof=1) / math.sqrt(X_T.size)
    assert abs(X_T.mean() - (1.0 + c * theta)) < 3 * se


def test_indifference_price_zero_claim(small_zero_vc, small_ensemble):
    assert indifference_price(small_zero_vc, small_ensemble, 3) == 0.0


def test_indifference_price_n0_near_put(small_vc, small_ensemble):
    assert indifference_price(small_vc, small_ensemble, 0) == pytest.approx(0.5953, abs=0.05)


def test_normalize_levels():
    with pytest.warns(UserWarning, match="duplicate"):
        assert normalize_levels([10, 1, 10, 2]) == [1, 2, 10]
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert normalize_levels([3, 0]) == [0, 3]
    with pytest.raises(ValueError):
        normalize_levels([])
    with pytest.raises(ValueError):
        normalize_levels([-1])
    with pytest.raises(ValueError, match="exceeds"):
        normalize_levels([60], n_max=50)


def test_sweep_single_level(small_vc, small_ensemble):
    res = sweep(small_vc, [0], x=1.0, ensemble=small_ensemble)
    (row,) = res.rows
    assert row.n == 0 and row.p_n == 1.0
    assert row.V == value_function(1.0, row.y0, 0.25)


def test_sweep_rows_and_survival(small_vc, small_ensemble, tmp_path):
    res = sweep(small_vc, [20, 1], ensemble=small_ensemble)
    assert [r.n for r in res.rows] == [1, 20]
    assert res.rows[0].p_n == pytest.approx(math.exp(-1.0))
    assert res.rows[1].p_n == pytest.approx(math.exp(-1.0) / 20)
    assert res.rows[1].y0 >= res.rows[0].y0 - 2 * res.paired_se(0, 1)
    assert all(r.P_n >= -2 * r.P_se for r in res.rows)
    lines = write_sweep_csv(res, tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "n,p_n,y0,V,P_n" and len(lines) == 3


def test_sweep_shares_one_ensemble(small_vc, small_ensemble):
    from randomhorizon.bsde import solve_truncated

    res = sweep(small_vc, [2], ensemble=small_ensemble)
    put = solve_truncated(small_vc, small_ensemble, 2).y0
    zero = solve_truncated(small_vc.with_claim(ClaimSpec("zero")), small_ensemble, 2).y0
    assert res.rows[0].P_n == put - zero


def test_strategy_and_wealth_csv(tmp_path):
    p = np.arange(50.0)
    out = write_strategy_csv(TIMES, p, p + 1, tmp_path / "strategy.csv")
    assert out.read_text().splitlines()[0] == "k,t,p_star,p_star_nodefault"
    out = write_wealth_csv(TIMES, np.ones(51), tmp_path / "wealth.csv")
    lines = out.read_text().splitlines()
    assert lines[0] == "k,t,X" and len(lines) == 52
