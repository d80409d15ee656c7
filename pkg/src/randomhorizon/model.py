"""Problem data: market, claim, default intensity, trading constraints and grid.

Everything downstream consumes a :class:`ValidatedConfig`, produced by
:func:`validate` from a raw :class:`ProblemConfig` (or parsed from a flat
``key = value`` text file by :func:`load_config`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal, Sequence

import numpy as np


class ConfigError(ValueError):
    """Invalid problem configuration; the message names the offending field."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MarketParams:
    maturity_T: float = 1.0
    risk_aversion_alpha: float = 0.25
    theta: tuple[float, ...] = (1.0,)
    sigma: float = 1.0
    mu: float = 1.0
    s0: float = 0.5
    interest_rate: float = 0.0


@dataclass(frozen=True)
class ClaimSpec:
    """Claim paid at default (``xi_a``) plus the terminal part ``xi_b``.

    ``kind`` is ``"put"`` (put on the asset with ``strike``), ``"zero"``, or
    ``"deterministic"`` (values tabulated on the time grid in ``samples``,
    identical on every path).
    """

    kind: Literal["put", "zero", "deterministic"] = "put"
    strike: float = 1.0
    samples: tuple[float, ...] | None = None
    xi_b: float = 0.0


@dataclass(frozen=True)
class IntensitySpec:
    """Default intensity ``lambda`` and its truncation level ``n``.

    ``kind="singular"`` is ``lambda_s = 1/(T - s)``; ``kind="constant"`` is a
    bounded flat hazard ``level``. ``truncation_n = 0`` is the no-default model.
    """

    kind: Literal["singular", "constant"] = "singular"
    truncation_n: int = 0
    level: float = 0.0


@dataclass(frozen=True)
class ConstraintSet:
    """Closed trading-constraint set: all of R^d, or a box ``[lower, upper]``."""

    kind: Literal["unconstrained", "box"] = "unconstrained"
    lower: tuple[float, ...] | None = None
    upper: tuple[float, ...] | None = None

    @classmethod
    def box(cls, lower: Sequence[float], upper: Sequence[float]) -> "ConstraintSet":
        return cls("box", tuple(float(v) for v in lower), tuple(float(v) for v in upper))

    def project(self, a: np.ndarray) -> np.ndarray:
        """Euclidean projection onto the set; the last axis is the dimension."""
        a = np.asarray(a, dtype=float)
        if self.kind == "unconstrained":
            return a.copy()
        return np.clip(a, np.asarray(self.lower), np.asarray(self.upper))

    def distance(self, a: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        if self.kind == "unconstrained":
            return np.zeros(a.shape[:-1])
        return np.linalg.norm(a - self.project(a), axis=-1)

    def contains(self, a: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        if self.kind == "unconstrained":
            return np.ones(a.shape[:-1], dtype=bool)
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        return np.all((a >= lo) & (a <= hi), axis=-1)


@dataclass(frozen=True)
class Discretization:
    n_steps: int = 50
    n_paths: int = 100_000
    picard_max_iters: int = 20
    picard_tol: float = 1e-4
    basis_degree: int = 3
    seed: int = 20240101


@dataclass(frozen=True)
class ProblemConfig:
    market: MarketParams = field(default_factory=MarketParams)
    claim: ClaimSpec = field(default_factory=ClaimSpec)
    intensity: IntensitySpec = field(default_factory=IntensitySpec)
    constraint: ConstraintSet = field(default_factory=ConstraintSet)
    discretization: Discretization = field(default_factory=Discretization)
    # "alpha": constant driver term |theta|^2/(2 alpha); "half": |theta|^2/2.
    driver_variant: Literal["alpha", "half"] = "alpha"
    # Markov state used by the conditional-expectation regressions.
    regression_state: Literal["brownian", "asset"] = "brownian"
    # "implicit": Y solved exactly at each node; "picard": lagged Y in the driver.
    y_update: Literal["implicit", "picard"] = "implicit"
    # Ceiling on n_paths * (n_steps + 1) stored floats per path array.
    max_grid_cells: int = 200_000_000

    def with_truncation(self, n: int) -> "ProblemConfig":
        return replace(self, intensity=replace(self.intensity, truncation_n=int(n)))

    def with_claim(self, claim: ClaimSpec) -> "ProblemConfig":
        return replace(self, claim=claim)


@dataclass(frozen=True)
class ValidatedConfig:
    """A checked :class:`ProblemConfig` with the time grid materialized."""

    config: ProblemConfig
    dt: float
    n_steps: int

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    # Shortcuts used all over the numerics.
    @property
    def market(self) -> MarketParams:
        return self.config.market

    @property
    def claim(self) -> ClaimSpec:
        return self.config.claim

    @property
    def intensity(self) -> IntensitySpec:
        return self.config.intensity

    @property
    def constraint(self) -> ConstraintSet:
        return self.config.constraint

    @property
    def disc(self) -> Discretization:
        return self.config.discretization

    @property
    def T(self) -> float:
        return self.config.market.maturity_T

    @property
    def alpha(self) -> float:
        return self.config.market.risk_aversion_alpha

    @property
    def theta(self) -> np.ndarray:
        return np.asarray(self.config.market.theta, dtype=float)

    def with_truncation(self, n: int) -> "ValidatedConfig":
        return validate(self.config.with_truncation(n))

    def with_claim(self, claim: ClaimSpec) -> "ValidatedConfig":
        return validate(self.config.with_claim(claim))


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _require(cond: bool, name: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{name}: {msg}")


def max_truncation(T: float, n_steps: int) -> int:
    """Largest truncation level the grid can resolve, floor(1/dt)."""
    # n * dt <= 1  <=>  n * T <= N, checked in exact-ish arithmetic
    return int(math.floor(n_steps / T + 1e-9))


def validate(config: ProblemConfig | ValidatedConfig) -> ValidatedConfig:
    """Check every invariant of ``config`` and materialize the grid.

    Idempotent: validating a :class:`ValidatedConfig` re-checks its underlying
    problem and returns an equal object.
    """
    if isinstance(config, ValidatedConfig):
        config = config.config
    m, c, lam, con, d = (
        config.market,
        config.claim,
        config.intensity,
        config.constraint,
        config.discretization,
    )

    _require(math.isfinite(m.maturity_T) and m.maturity_T > 0, "maturity_T", "must be > 0")
    _require(m.risk_aversion_alpha > 0, "risk_aversion_alpha", "must be > 0")
    _require(m.sigma > 0, "sigma", "must be > 0")
    _require(m.s0 > 0, "s0", "must be > 0")
    _require(m.interest_rate == 0.0, "interest_rate", "only r = 0 is supported")
    _require(len(m.theta) >= 1, "theta", "needs at least one component")
    _require(all(math.isfinite(v) for v in m.theta), "theta", "must be finite")
    _require(math.isfinite(m.mu), "mu", "must be finite")

    _require(c.kind in ("put", "zero", "deterministic"), "claim", f"unknown kind {c.kind!r}")
    if c.kind == "put":
        _require(c.strike >= 0, "strike", "must be >= 0")
    if c.kind == "deterministic":
        _require(
            c.samples is not None and len(c.samples) == d.n_steps + 1,
            "samples",
            "deterministic claim needs one value per grid node (n_steps + 1)",
        )

    _require(lam.kind in ("singular", "constant"), "lambda_kind", f"unknown kind {lam.kind!r}")
    _require(
        isinstance(lam.truncation_n, (int, np.integer)) and lam.truncation_n >= 0,
        "truncation_n",
        "must be a nonnegative integer",
    )
    if lam.kind == "singular" and c.xi_b != 0.0:
        raise ConfigError("xi_b: H2prime requires xi_b = 0")
    if lam.kind == "constant":
        _require(lam.level >= 0, "lambda_level", "must be >= 0")

    _require(con.kind in ("unconstrained", "box"), "constraint", f"unknown kind {con.kind!r}")
    if con.kind == "box":
        _require(
            con.lower is not None and con.upper is not None, "constraint", "box needs bounds"
        )
        _require(
            len(con.lower) == len(con.upper) == len(m.theta),
            "constraint",
            "box bounds must match the dimension of theta",
        )
        _require(
            all(lo <= hi for lo, hi in zip(con.lower, con.upper)),
            "constraint",
            "box needs lower <= upper componentwise",
        )

    _require(d.n_steps >= 2, "n_steps", "must be >= 2")
    _require(d.n_paths >= 2, "n_paths", "must be >= 2")
    _require(d.picard_max_iters >= 1, "picard_max_iters", "must be >= 1")
    _require(d.picard_tol > 0, "picard_tol", "must be > 0")
    _require(d.basis_degree >= 0, "basis_degree", "must be >= 0")
    _require(0 <= d.seed < 2**64, "seed", "must fit in 64 bits")

    n_max = max_truncation(m.maturity_T, d.n_steps)
    if lam.truncation_n > n_max:
        raise ConfigError(
            f"truncation_n: {lam.truncation_n} exceeds 1/dt = {n_max}; the truncation "
            "lambda ^ n is invisible on this grid beyond 1/dt, refine n_steps instead"
        )

    _require(config.driver_variant in ("alpha", "half"), "driver_variant", "alpha or half")
    _require(
        config.regression_state in ("brownian", "asset"),
        "regression_state",
        "brownian or asset",
    )
    _require(config.y_update in ("implicit", "picard"), "y_update", "implicit or picard")

    return ValidatedConfig(config=config, dt=m.maturity_T / d.n_steps, n_steps=d.n_steps)


# ---------------------------------------------------------------------------
# Intensity
# ---------------------------------------------------------------------------


def lambda_at(spec: IntensitySpec, t: float | np.ndarray, T: float) -> float | np.ndarray:
    """Truncated intensity ``min(lambda(t), n)``; zero when ``n = 0``."""
    t_arr = np.asarray(t, dtype=float)
    n = spec.truncation_n
    if spec.kind == "singular":
        if np.any(t_arr >= T) or np.any(t_arr < 0):
            raise ValueError(f"singular intensity needs 0 <= t < T={T}, got {t}")
        raw = 1.0 / (T - t_arr)
    else:
        raw = np.full_like(t_arr, spec.level)
    out = np.zeros_like(t_arr) if n == 0 else np.minimum(raw, float(n))
    return float(out) if out.ndim == 0 else out


def cumulative_hazard(spec: IntensitySpec, t: float | np.ndarray, T: float) -> float | np.ndarray:
    """Closed form of ``int_0^t min(lambda_s, n) ds`` for ``0 <= t <= T``."""
    t_arr = np.asarray(t, dtype=float)
    n = spec.truncation_n
    if n == 0:
        out = np.zeros_like(t_arr)
    elif spec.kind == "constant":
        out = min(spec.level, float(n)) * t_arr
    elif n * T < 1.0:
        out = n * t_arr
    else:
        joint = T - 1.0 / n
        with np.errstate(divide="ignore"):
            before = np.log(T / (T - np.minimum(t_arr, joint)))
        out = np.where(t_arr <= joint, before, math.log(n * T) + n * (t_arr - joint))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Config file
# ---------------------------------------------------------------------------

CORE_KEYS = (
    "maturity",
    "alpha",
    "theta",
    "sigma",
    "mu",
    "s0",
    "strike",
    "lambda_kind",
    "truncation_n",
    "n_steps",
    "n_paths",
    "picard_max_iters",
    "picard_tol",
    "basis_degree",
    "seed",
)
EXTRA_KEYS = (
    "claim",
    "xi_b",
    "lambda_level",
    "constraint_lower",
    "constraint_upper",
    "driver_variant",
    "regression_state",
    "y_update",
)

_LAMBDA_KINDS = {"singular": "singular", "h2prime": "singular", "constant": "constant"}


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def parse_config(text: str) -> ProblemConfig:
    """Parse the flat ``key = value`` format. Blank lines and ``#`` comments are skipped."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CORE_KEYS and key not in EXTRA_KEYS:
            raise ConfigError(f"{key}: unknown config key (line {lineno})")
        if key in raw:
            raise ConfigError(f"{key}: duplicate config key (line {lineno})")
        raw[key] = value

    dflt = ProblemConfig()
    try:
        market = MarketParams(
            maturity_T=float(raw.get("maturity", dflt.market.maturity_T)),
            risk_aversion_alpha=float(raw.get("alpha", dflt.market.risk_aversion_alpha)),
            theta=_floats(raw["theta"]) if "theta" in raw else dflt.market.theta,
            sigma=float(raw.get("sigma", dflt.market.sigma)),
            mu=float(raw.get("mu", dflt.market.mu)),
            s0=float(raw.get("s0", dflt.market.s0)),
        )
        claim = ClaimSpec(
            kind=raw.get("claim", "put"),  # type: ignore[arg-type]
            strike=float(raw.get("strike", dflt.claim.strike)),
            xi_b=float(raw.get("xi_b", 0.0)),
        )
        kind = raw.get("lambda_kind", "singular").lower()
        if kind not in _LAMBDA_KINDS:
            raise ConfigError(f"lambda_kind: unknown kind {kind!r}")
        intensity = IntensitySpec(
            kind=_LAMBDA_KINDS[kind],  # type: ignore[arg-type]
            truncation_n=int(raw.get("truncation_n", 0)),
            level=float(raw.get("lambda_level", 0.0)),
        )
        if "constraint_lower" in raw or "constraint_upper" in raw:
            if not ("constraint_lower" in raw and "constraint_upper" in raw):
                raise ConfigError("constraint: both constraint_lower and constraint_upper needed")
            constraint = ConstraintSet.box(
                _floats(raw["constraint_lower"]), _floats(raw["constraint_upper"])
            )
        else:
            constraint = ConstraintSet()
        d = dflt.discretization
        disc = Discretization(
            n_steps=int(raw.get("n_steps", d.n_steps)),
            n_paths=int(raw.get("n_paths", d.n_paths)),
            picard_max_iters=int(raw.get("picard_max_iters", d.picard_max_iters)),
            picard_tol=float(raw.get("picard_tol", d.picard_tol)),
            basis_degree=int(raw.get("basis_degree", d.basis_degree)),
            seed=int(raw.get("seed", d.seed)),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed value: {exc}") from exc

    return ProblemConfig(
        market=market,
        claim=claim,
        intensity=intensity,
        constraint=constraint,
        discretization=disc,
        driver_variant=raw.get("driver_variant", "alpha"),  # type: ignore[arg-type]
        regression_state=raw.get("regression_state", "brownian"),  # type: ignore[arg-type]
        y_update=raw.get("y_update", "implicit"),  # type: ignore[arg-type]
    )


def load_config(path: str | Path) -> ValidatedConfig:
    return validate(parse_config(Path(path).read_text()))


def dump_config(config: ProblemConfig | ValidatedConfig) -> str:
    """Inverse of :func:`parse_config` for the keys it understands."""
    if isinstance(config, ValidatedConfig):
        config = config.config
    m, c, lam, d = config.market, config.claim, config.intensity, config.discretization
    if c.kind == "deterministic":
        raise ConfigError("claim: deterministic claims cannot be written to a config file")
    items = [
        ("maturity", repr(m.maturity_T)),
        ("alpha", repr(m.risk_aversion_alpha)),
        ("theta", ",".join(repr(v) for v in m.theta)),
        ("sigma", repr(m.sigma)),
        ("mu", repr(m.mu)),
        ("s0", repr(m.s0)),
        ("strike", repr(c.strike)),
        ("lambda_kind", lam.kind),
        ("truncation_n", str(lam.truncation_n)),
        ("n_steps", str(d.n_steps)),
        ("n_paths", str(d.n_paths)),
        ("picard_max_iters", str(d.picard_max_iters)),
        ("picard_tol", repr(d.picard_tol)),
        ("basis_degree", str(d.basis_degree)),
        ("seed", str(d.seed)),
        ("claim", c.kind),
        ("xi_b", repr(c.xi_b)),
        ("lambda_level", repr(lam.level)),
        ("driver_variant", config.driver_variant),
        ("regression_state", config.regression_state),
        ("y_update", config.y_update),
    ]
    if config.constraint.kind == "box":
        items.append(("constraint_lower", ",".join(repr(v) for v in config.constraint.lower)))
        items.append(("constraint_upper", ",".join(repr(v) for v in config.constraint.upper)))
    return "".join(f"{k} = {v}\n" for k, v in items)


def study_config(**overrides) -> ProblemConfig:
    """Market and grid of the numerical study (T=1, alpha=0.25, dt=0.02, put K=1)."""
    disc_keys = {f for f in Discretization.__dataclass_fields__}
    disc = Discretization(**{k: v for k, v in overrides.items() if k in disc_keys})
    rest = {k: v for k, v in overrides.items() if k not in disc_keys}
    return ProblemConfig(discretization=disc, **rest)
