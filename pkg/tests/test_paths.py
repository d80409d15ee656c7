import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from randomhorizon.model import ClaimSpec, IntensitySpec, cumulative_hazard, validate
from randomhorizon.paths import (
    BLOCK_SIZE,
    ResourceError,
    claim_at_time,
    default_times,
    default_times_for,
    generate_ensemble,
    sample_default_time,
    survival_probability,
    survival_probability_for,
    write_paths_csv,
)

from conftest import small_config


def test_shapes_and_start_values(small_vc, small_ensemble):
    ens = small_ensemble
    M, N = small_vc.disc.n_paths, small_vc.n_steps
    assert ens.dW.shape == (M, N) and ens.W.shape == (M, N + 1) and ens.S.shape == (M, N + 1)
    assert np.all(ens.W[:, 0] == 0.0)
    assert np.all(ens.S[:, 0] == small_vc.market.s0)
    assert np.all(ens.phi > 0)
    np.testing.assert_allclose(np.diff(ens.W, axis=1), ens.dW, atol=1e-14)


def test_asset_is_exact_gbm(small_vc, small_ensemble):
    m = small_vc.market
    expected = m.s0 * np.exp(m.sigma * small_ensemble.W + (m.mu - 0.5 * m.sigma**2) * small_vc.times)
    np.testing.assert_allclose(small_ensemble.S, expected, rtol=1e-14)


def test_put_claim_values(small_ensemble):
    np.testing.assert_array_equal(small_ensemble.xi_a, np.maximum(1.0 - small_ensemble.S, 0.0))


@pytest.mark.parametrize("threads", [2, 0])
def test_threads_do_not_change_output(threads):
    vc = small_config(n_paths=2 * BLOCK_SIZE + 17)
    a = generate_ensemble(vc, threads=1)
    b = generate_ensemble(vc, threads=threads)
    for name in ("dW", "phi", "tau_normal", "S"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_seed_override_and_prefix_stability():
    vc = small_config(n_paths=BLOCK_SIZE + 5)
    a = generate_ensemble(vc)
    assert not np.array_equal(a.dW, generate_ensemble(vc, seed=12).dW)
    # the first block does not depend on how many paths follow it
    b = generate_ensemble(small_config(n_paths=BLOCK_SIZE + 100))
    assert np.array_equal(a.dW[:BLOCK_SIZE], b.dW[:BLOCK_SIZE])


def test_increment_moments(small_vc, small_ensemble):
    dW = small_ensemble.dW
    assert abs(dW.mean()) < 4 * math.sqrt(small_vc.dt / dW.size)
    assert dW.var() == pytest.approx(small_vc.dt, rel=0.02)
    assert small_ensemble.phi.mean() == pytest.approx(1.0, abs=4 / math.sqrt(dW.shape[0]))


def test_resource_cap():
    vc = validate(replace(small_config().config, max_grid_cells=10))
    with pytest.raises(ResourceError):
        generate_ensemble(vc)


@pytest.mark.parametrize(
    "n, T, expected",
    [
        (0, 1.0, 1.0),
        (1, 1.0, math.exp(-1.0)),
        (2, 1.0, math.exp(-1.0) / 2),
        (10, 1.0, math.exp(-1.0) / 10),
        (50, 1.0, math.exp(-1.0) / 50),
        (1, 0.5, math.exp(-0.5)),
        (3, 2.0, math.exp(-1.0) / 6),
    ],
)
def test_survival_probability(n, T, expected):
    assert survival_probability(n, T) == pytest.approx(expected, rel=1e-15)


def test_survival_strictly_decreasing():
    p = [survival_probability(n, 1.0) for n in range(1, 60)]
    assert all(a > b for a, b in zip(p, p[1:]))


@settings(max_examples=200, deadline=None)
@given(phi=st.floats(1e-6, 30.0), n=st.integers(1, 500), T=st.floats(0.1, 5.0))
def test_default_time_inverts_hazard(phi, n, T):
    tau = float(default_times(np.array([phi]), n, T)[0])
    assert 0.0 < tau <= T
    if tau < T:
        assert cumulative_hazard(IntensitySpec("singular", n), tau, T) == pytest.approx(phi, rel=1e-9, abs=1e-12)
    else:
        assert phi >= cumulative_hazard(IntensitySpec("singular", n), T, T) - 1e-9


@settings(max_examples=100, deadline=None)
@given(phi=st.floats(1e-6, 30.0), n=st.integers(1, 200))
def test_default_time_decreasing_in_n(phi, n):
    a = default_times(np.array([phi]), n, 1.0)[0]
    b = default_times(np.array([phi]), n + 1, 1.0)[0]
    assert b <= a + 1e-15


def test_default_time_errors_and_no_default():
    with pytest.raises(ValueError):
        default_times(np.array([0.0]), 3, 1.0)
    assert np.all(default_times(np.array([0.1, 5.0]), 0, 1.0) == 1.0)
    # n = 1 with T = 1: the truncated hazard is the constant 1
    assert sample_default_time(0.5, 1, 1.0).tau_n == pytest.approx(0.5)
    s = sample_default_time(0.5, 5, 1.0)
    assert s.tau_n == pytest.approx(1 - math.exp(-0.5)) and s.hit_before_T


def test_constant_intensity():
    spec = IntensitySpec("constant", 5, 2.0)
    assert default_times_for(spec, np.array([1.0]), 1.0)[0] == pytest.approx(0.5)
    assert survival_probability_for(spec, 1.0) == pytest.approx(math.exp(-2.0))


@pytest.mark.parametrize("n", [1, 2, 10, 50])
def test_empirical_survival(small_ensemble, n):
    tau = default_times(small_ensemble.phi, n, 1.0)
    assert np.mean(tau >= 1.0) == pytest.approx(survival_probability(n, 1.0), abs=4 / math.sqrt(tau.size))


def test_claim_at_time(small_vc, small_ensemble):
    dt = small_vc.dt
    assert claim_at_time(small_vc, small_ensemble, 3, 5 * dt) == small_ensemble.xi_a[3, 5]
    v = claim_at_time(small_vc, small_ensemble, 3, 5.5 * dt)
    m = small_vc.market
    s = small_ensemble.S[3, 5] * math.exp(m.sigma * math.sqrt(0.5 * dt) * small_ensemble.tau_normal[3] + 0.5 * (m.mu - 0.5) * dt)
    assert v == pytest.approx(max(1.0 - s, 0.0), rel=1e-12, abs=1e-15)
    det = small_vc.with_claim(ClaimSpec("deterministic", samples=tuple(small_vc.times)))
    assert claim_at_time(det, small_ensemble, 0, 0.37) == pytest.approx(0.37)
    assert claim_at_time(small_vc.with_claim(ClaimSpec("zero")), small_ensemble, 0, 0.37) == 0.0


def test_write_paths_csv(tmp_path, small_ensemble):
    out = write_paths_csv(small_ensemble, tmp_path / "paths.csv", [0, 2])
    lines = out.read_text().splitlines()
    assert lines[0] == "path,k,t,W,S,xi_a"
    assert len(lines) == 1 + 2 * small_ensemble.times.size
    assert float(lines[-1].split(",")[4]) == small_ensemble.S[2, -1]
