import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from randomhorizon.model import (
    CORE_KEYS,
    ClaimSpec,
    ConfigError,
    ConstraintSet,
    Discretization,
    IntensitySpec,
    MarketParams,
    ProblemConfig,
    cumulative_hazard,
    dump_config,
    lambda_at,
    load_config,
    max_truncation,
    study_config,
    parse_config,
    validate,
)
from randomhorizon.oracles import adaptive_simpson


def test_study_defaults():
    vc = validate(study_config())
    assert vc.T == 1.0 and vc.alpha == 0.25 and vc.dt == pytest.approx(0.02)
    assert vc.times.shape == (51,)
    assert vc.times[-1] == 1.0
    assert vc.claim.kind == "put" and vc.claim.strike == 1.0


def test_validate_is_idempotent():
    vc = validate(study_config())
    assert validate(vc) == vc


@pytest.mark.parametrize(
    "config, field",
    [
        (ProblemConfig(market=MarketParams(risk_aversion_alpha=0.0)), "risk_aversion_alpha"),
        (ProblemConfig(market=MarketParams(maturity_T=-1.0)), "maturity_T"),
        (ProblemConfig(market=MarketParams(sigma=0.0)), "sigma"),
        (ProblemConfig(market=MarketParams(s0=0.0)), "s0"),
        (ProblemConfig(market=MarketParams(interest_rate=0.01)), "interest_rate"),
        (ProblemConfig(claim=ClaimSpec(xi_b=1.0)), "xi_b"),
        (ProblemConfig(claim=ClaimSpec("deterministic", samples=(1.0, 2.0))), "samples"),
        (ProblemConfig(intensity=IntensitySpec(truncation_n=-1)), "truncation_n"),
        (ProblemConfig(intensity=IntensitySpec(truncation_n=51)), "truncation_n"),
        (ProblemConfig(constraint=ConstraintSet.box([1.0], [0.0])), "constraint"),
        (ProblemConfig(constraint=ConstraintSet.box([0.0, 0.0], [1.0, 1.0])), "constraint"),
        (ProblemConfig(discretization=Discretization(n_steps=1)), "n_steps"),
        (ProblemConfig(discretization=Discretization(picard_tol=0.0)), "picard_tol"),
        (ProblemConfig(driver_variant="quarter"), "driver_variant"),
    ],
)
def test_validation_names_the_field(config, field):
    with pytest.raises(ConfigError, match=field):
        validate(config)


def test_singular_intensity_forbids_terminal_claim():
    with pytest.raises(ConfigError, match="xi_b = 0"):
        validate(ProblemConfig(claim=ClaimSpec(xi_b=0.5)))
    # a bounded hazard allows it
    validate(ProblemConfig(claim=ClaimSpec(xi_b=0.5), intensity=IntensitySpec("constant", 2, 1.0)))


def test_truncation_limit_message():
    with pytest.raises(ConfigError, match="1/dt = 50"):
        validate(study_config()).with_truncation(51)
    assert validate(study_config()).with_truncation(50).intensity.truncation_n == 50


@pytest.mark.parametrize("T, N, expected", [(1.0, 50, 50), (2.0, 50, 25), (0.5, 50, 100), (3.0, 10, 3)])
def test_max_truncation(T, N, expected):
    assert max_truncation(T, N) == expected


@pytest.mark.parametrize("n, t, expected", [(0, 0.5, 0.0), (1, 0.0, 1.0), (1, 0.9, 1.0), (50, 0.0, 1.0), (50, 0.99, 50.0)])
def test_lambda_at(n, t, expected):
    assert lambda_at(IntensitySpec("singular", n), t, 1.0) == pytest.approx(expected)


def test_lambda_at_rejects_maturity():
    with pytest.raises(ValueError):
        lambda_at(IntensitySpec("singular", 5), 1.0, 1.0)


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(1, 200),
    T=st.floats(0.1, 3.0),
    frac=st.floats(0.0, 1.0),
)
def test_cumulative_hazard_matches_quadrature(n, T, frac):
    spec = IntensitySpec("singular", n)
    t = frac * T
    lam = lambda s: np.minimum(1.0 / np.maximum(T - s, 1e-300), n)
    # the integrand has a kink at T - 1/n; split there
    kink = min(max(T - 1.0 / n, 0.0), t)
    a, _ = adaptive_simpson(lam, 0.0, kink, 64)
    b, _ = adaptive_simpson(lam, kink, t, 64)
    assert cumulative_hazard(spec, t, T) == pytest.approx(a + b, rel=1e-7, abs=1e-9)


def test_config_round_trip(tmp_path):
    cfg = study_config(n_paths=1234, seed=5, constraint=ConstraintSet.box([-1.0], [2.0]))
    path = tmp_path / "c.cfg"
    path.write_text(dump_config(cfg))
    assert load_config(path).config == cfg


@settings(max_examples=40, deadline=None)
@given(
    alpha=st.floats(0.01, 5.0),
    theta=st.floats(-3.0, 3.0),
    n_steps=st.integers(2, 200),
    seed=st.integers(0, 2**63),
    variant=st.sampled_from(["alpha", "half"]),
)
def test_dump_parse_property(alpha, theta, n_steps, seed, variant):
    cfg = ProblemConfig(
        market=MarketParams(risk_aversion_alpha=alpha, theta=(theta,)),
        discretization=Discretization(n_steps=n_steps, seed=seed),
        driver_variant=variant,
    )
    assert parse_config(dump_config(cfg)) == cfg


def test_core_keys_alone_parse():
    text = "\n".join(f"{k} = {v}" for k, v in zip(CORE_KEYS, ["1", "0.25", "1", "1", "1", "0.5", "1", "singular", "2", "50", "1000", "20", "1e-4", "3", "9"]))
    vc = validate(parse_config(text))
    assert vc.intensity.truncation_n == 2 and vc.disc.n_paths == 1000


@pytest.mark.parametrize(
    "text, match",
    [
        ("alpha = 1\nalpha = 2\n", "duplicate"),
        ("gamma = 1\n", "unknown"),
        ("alpha 1\n", "key = value"),
        ("alpha = abc\n", "malformed"),
        ("lambda_kind = weird\n", "lambda_kind"),
        ("constraint_lower = 0\n", "both"),
    ],
)
def test_parse_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_comments_and_blank_lines():
    cfg = parse_config("# header\n\nalpha = 0.5  # inline\n")
    assert cfg.market.risk_aversion_alpha == 0.5


def test_with_truncation_does_not_mutate():
    cfg = study_config()
    assert cfg.with_truncation(7).intensity.truncation_n == 7
    assert cfg.intensity.truncation_n == 0
    assert replace(cfg) == cfg


box_strategy = st.tuples(
    st.lists(st.floats(-5, 5), min_size=1, max_size=3),
    st.lists(st.floats(0, 5), min_size=3, max_size=3),
)


@settings(max_examples=100, deadline=None)
@given(box=box_strategy, point=st.lists(st.floats(-20, 20), min_size=3, max_size=3))
def test_projection_properties(box, point):
    lower, widths = box
    d = len(lower)
    upper = [lo + w for lo, w in zip(lower, widths[:d])]
    C = ConstraintSet.box(lower, upper)
    a = np.array(point[:d])
    p = C.project(a)
    assert np.array_equal(C.project(p), p)
    assert bool(C.contains(p))
    assert C.distance(a) == pytest.approx(np.linalg.norm(a - p))
    assert (C.distance(a) == 0.0) == bool(C.contains(a))


def test_unconstrained_projection_is_identity():
    a = np.array([[1.5, -2.0], [0.0, 3.0]])
    C = ConstraintSet()
    assert np.array_equal(C.project(a), a)
    assert np.all(C.distance(a) == 0.0)
    assert math.isclose(float(ConstraintSet.box([-1], [1]).project(np.array([4.0]))[0]), 1.0)
