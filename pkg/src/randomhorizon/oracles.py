"""Independent reference solutions used to check the solver.

* no-claim closed form ``-theta^2 (T - t) / (2 alpha)``;
* the put value under the drift-removing measure (Black-Scholes with zero rate);
* the linear singular BSDE, whose solution is the running average of the claim;
* the singular terminal-value ODE ``x' = lambda (e^xi - x)`` obtained for alpha = 1.

Quadratures use composite Simpson, doubled until two successive estimates
agree to ``QUAD_TOL``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.stats import norm

from ._io import write_csv
from .model import ClaimSpec, ProblemConfig, ValidatedConfig, max_truncation, study_config, validate

QUAD_TOL = 1e-8
QUAD_MAX_DOUBLINGS = 16
# tail cut of the substituted ODE integral; the integrand carries e^{-q}
ODE_Q_CAP = 40.0

XiFn = Callable[[np.ndarray], np.ndarray]


class OracleDomainError(ValueError):
    pass


def oracle_no_claim(theta: float | Sequence[float], alpha: float, T: float, t: float = 0.0) -> float:
    """Initial value of the claim-free problem without default."""
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    sq = float(np.sum(np.square(theta)))
    return -sq * (T - t) / (2.0 * alpha)


def oracle_put_price(s0: float, K: float, sigma: float, T: float, drift: float = 0.0) -> float:
    """``E[(K - S_T)^+]`` for ``S_T = s0 exp(sigma sqrt(T) G + (drift - sigma^2/2) T)``.

    ``drift = mu - sigma theta`` is the asset drift left after removing the
    market price of risk; it vanishes for the study parameters.
    """
    if K <= 0:
        return 0.0
    fwd = s0 * math.exp(drift * T)
    vol = sigma * math.sqrt(T)
    if vol == 0.0:
        return max(K - fwd, 0.0)
    d1 = (math.log(fwd / K) + 0.5 * vol**2) / vol
    d2 = d1 - vol
    return float(K * norm.cdf(-d2) - fwd * norm.cdf(-d1))


def put_price_mc(s0: float, K: float, sigma: float, T: float, draws: int = 1_000_000, seed: int = 7) -> tuple[float, float]:
    """Plain Monte Carlo of the zero-drift put: (estimate, standard error)."""
    g = np.random.default_rng(seed).standard_normal(draws)
    pay = np.maximum(K - s0 * np.exp(sigma * math.sqrt(T) * g - 0.5 * sigma**2 * T), 0.0)
    return float(pay.mean()), float(pay.std(ddof=1) / math.sqrt(draws))


def simpson(f: Callable[[np.ndarray], np.ndarray], a: float, b: float, intervals: int) -> float:
    """Composite Simpson rule on ``intervals`` (rounded up to even) subintervals."""
    m = intervals + (intervals % 2)
    x = np.linspace(a, b, m + 1)
    w = np.ones(m + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return float((b - a) / (3 * m) * np.dot(w, f(x)))


def adaptive_simpson(
    f: Callable[[np.ndarray], np.ndarray], a: float, b: float, intervals: int, tol: float = QUAD_TOL
) -> tuple[float, bool]:
    """Double the Simpson grid until successive estimates differ by < ``tol``.

    Returns ``(estimate, converged)``; non-smooth integrands may exhaust the
    doubling budget.
    """
    if b == a:
        return 0.0, True
    prev = simpson(f, a, b, intervals)
    m = intervals
    for _ in range(QUAD_MAX_DOUBLINGS):
        m *= 2
        cur = simpson(f, a, b, m)
        if abs(cur - prev) < tol:
            return cur, True
        prev = cur
    return prev, False


@dataclass(frozen=True)
class LinearBsdeOracle:
    """``Y(t) = (T - t)^{-1} int_t^T xi(s) ds``, the linear BSDE with intensity 1/(T - s)."""

    xi: XiFn
    T: float
    grid_steps: int = 50

    def __call__(self, t: float) -> float:
        if t >= self.T:
            raise OracleDomainError(f"t = {t} must be < T = {self.T}")
        # 10x the solver grid, refined from there
        intervals = max(2, int(math.ceil(10 * self.grid_steps * (self.T - t) / self.T)))
        integral, _ = adaptive_simpson(self.xi, t, self.T, intervals)
        return integral / (self.T - t)

    def terminal_mismatch(self, eps: float = 1e-6) -> float:
        """``Y(T - eps) - xi(T)``; stays away from 0 for claims discontinuous at T."""
        return self(self.T - eps) - float(self.xi(np.array([self.T]))[0])


def oracle_linear_bsde(xi: XiFn, T: float, grid_steps: int = 50) -> LinearBsdeOracle:
    return LinearBsdeOracle(xi, T, grid_steps)


@dataclass(frozen=True)
class SingularOdeOracle:
    """Integrating-factor solution of ``x' = (e^{xi} - x) / (T - t)``, ``y = log x``.

    Substituting ``s = T - (T - t) e^q``, the particular part becomes
    ``int_0^Q e^{xi(T - (T - t) e^q)} e^{-q} dq`` with ``Q = log(T / (T - t))``,
    a smooth integral even at ``t = T``.
    """

    xi: XiFn
    T: float
    C: float
    grid_steps: int = 50

    def x(self, t: float) -> float:
        T = self.T
        if not 0.0 <= t <= T:
            raise OracleDomainError(f"t = {t} outside [0, {T}]")
        h = T - t
        Q = ODE_Q_CAP if h == 0.0 else min(math.log(T / h), ODE_Q_CAP)

        def integrand(q: np.ndarray) -> np.ndarray:
            return np.exp(self.xi(T - h * np.exp(q)) - q)

        intervals = 10 * self.grid_steps * max(1, math.ceil(Q))
        particular, _ = adaptive_simpson(integrand, 0.0, Q, intervals)
        value = h / T * self.C + particular
        if value <= 0.0:
            raise OracleDomainError(f"x({t}) = {value} <= 0; the constant C = {self.C} is inadmissible")
        return value

    def y(self, t: float) -> float:
        return math.log(self.x(t))

    def terminal_error(self) -> float:
        """``|x(T) - e^{xi(T)}|``."""
        return abs(self.x(self.T) - math.exp(float(self.xi(np.array([self.T]))[0])))


def oracle_singular_ode(xi: XiFn, T: float, C: float | None = None, grid_steps: int = 50) -> SingularOdeOracle:
    """Default ``C = e^{xi(0)}`` makes ``x(0) = e^{xi(0)}`` up to the particular part."""
    if C is None:
        C = math.exp(float(xi(np.array([0.0]))[0]))
    return SingularOdeOracle(xi, T, C, grid_steps)


# ---------------------------------------------------------------------------
# Self-test
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleReport:
    name: str
    oracle_value: float
    solver_value: float
    abs_error: float
    tolerance: float
    passed: bool

    @classmethod
    def compare(cls, name: str, oracle: float, solver: float, tolerance: float) -> "OracleReport":
        err = abs(solver - oracle)
        return cls(name, float(oracle), float(solver), float(err), float(tolerance), bool(err <= tolerance))


ODE_TEST_CLAIMS: dict[str, XiFn] = {
    "identity": lambda s: np.asarray(s, dtype=float),
    "sine": lambda s: np.sin(3.0 * np.asarray(s, dtype=float)),
    "quadratic": lambda s: 0.5 - np.square(np.asarray(s, dtype=float) - 0.3),
}


def run_selftest(config: ProblemConfig | ValidatedConfig | None = None, tolerance_scale: float = 1.0) -> list[OracleReport]:
    """All oracle comparisons at the given config (the study parameters by default)."""
    from .bsde import solve_truncated
    from .paths import default_times, generate_ensemble, survival_probability

    vc = validate(config if config is not None else study_config())
    m = vc.market
    T, alpha = vc.T, vc.alpha
    theta = float(np.linalg.norm(m.theta))
    scale = float(tolerance_scale)
    reports: list[OracleReport] = []

    mc, mc_se = put_price_mc(m.s0, vc.claim.strike, m.sigma, T)
    put = oracle_put_price(m.s0, vc.claim.strike, m.sigma, T, drift=m.mu - m.sigma * theta)
    if m.mu == m.sigma * theta:
        reports.append(OracleReport.compare("put_closed_form_vs_mc", put, mc, scale * 4 * mc_se))

    base = vc.with_truncation(0)
    ens = generate_ensemble(base)
    zero = solve_truncated(base.with_claim(ClaimSpec("zero")), ens)
    no_claim = oracle_no_claim(m.theta, alpha, T)
    if vc.config.driver_variant == "half":
        no_claim *= alpha
    reports.append(OracleReport.compare("no_claim_y0", no_claim, zero.y0, scale * max(0.05, 4 * zero.y0_se)))
    put_sol = solve_truncated(base.with_claim(ClaimSpec("put", strike=vc.claim.strike)), ens)
    reports.append(
        OracleReport.compare("put_y0_n0", put + no_claim, put_sol.y0, scale * max(0.08, 4 * put_sol.y0_se))
    )

    for n in (1, 2, 10, 50):
        if n > max_truncation(T, vc.n_steps):
            continue
        exact = math.exp(-n * T) if T <= 1.0 / n else math.exp(-1.0) / (n * T)
        reports.append(OracleReport.compare(f"survival_formula_n{n}", exact, survival_probability(n, T), scale * 1e-15))
        tau = default_times(ens.phi, n, T)
        reports.append(
            OracleReport.compare(
                f"survival_empirical_n{n}", 0.0, survival_gap(tau, n, vc.times), scale * 4 / math.sqrt(ens.n_paths)
            )
        )

    lin = _linear_bsde_check(vc)
    reports.append(OracleReport.compare("linear_singular_bsde_y0", lin[0], lin[1], scale * 0.02))

    for name, fn in ODE_TEST_CLAIMS.items():
        ode = oracle_singular_ode(fn, T, grid_steps=vc.n_steps)
        target = math.exp(float(fn(np.array([T]))[0]))
        reports.append(OracleReport.compare(f"singular_ode_terminal_{name}", target, ode.x(T), scale * 1e-6))
        shifted = oracle_singular_ode(fn, T, C=ode.C + 0.5, grid_steps=vc.n_steps)
        reports.append(OracleReport.compare(f"singular_ode_c_shift_{name}", ode.x(T), shifted.x(T), scale * 1e-6))
    return reports


def survival_gap(tau: np.ndarray, n: int, times: np.ndarray) -> float:
    """Largest gap over the grid between the empirical and exact ``P(tau > t)``.

    At ``t = T`` the truncated clock only leaves mass through the cap, so the
    empirical side there is ``P(tau >= T)``.
    """
    from .model import IntensitySpec, cumulative_hazard

    T = float(times[-1])
    spec = IntensitySpec("singular", n)
    exact = np.exp(-np.asarray(cumulative_hazard(spec, times, T), dtype=float))
    empirical = np.array([np.mean(tau > t) for t in times[:-1]] + [np.mean(tau >= T)])
    return float(np.max(np.abs(empirical - exact)))


def linear_bsde_config(vc: ValidatedConfig, n_paths: int = 4096) -> ValidatedConfig:
    """theta = 0, alpha = 1e-3, claim xi(s) = s tabulated on the grid, n = 1/dt."""
    cfg = vc.config
    market = type(cfg.market)(
        maturity_T=vc.T, risk_aversion_alpha=1e-3, theta=(0.0,) * len(cfg.market.theta),
        sigma=cfg.market.sigma, mu=cfg.market.mu, s0=cfg.market.s0,
    )
    disc = type(cfg.discretization)(
        n_steps=vc.n_steps, n_paths=n_paths, picard_max_iters=cfg.discretization.picard_max_iters,
        picard_tol=cfg.discretization.picard_tol, basis_degree=cfg.discretization.basis_degree,
        seed=cfg.discretization.seed,
    )
    claim = ClaimSpec("deterministic", samples=tuple(float(t) for t in vc.times))
    new = ProblemConfig(
        market=market, claim=claim, intensity=cfg.intensity, constraint=cfg.constraint,
        discretization=disc, driver_variant=cfg.driver_variant,
        regression_state=cfg.regression_state, y_update=cfg.y_update,
    )
    return validate(new.with_truncation(max_truncation(vc.T, vc.n_steps)))


def _linear_bsde_check(vc: ValidatedConfig) -> tuple[float, float]:
    from .bsde import solve_truncated
    from .paths import generate_ensemble

    lin = linear_bsde_config(vc)
    sol = solve_truncated(lin, generate_ensemble(lin))
    oracle = oracle_linear_bsde(lambda s: np.asarray(s, dtype=float), lin.T, lin.n_steps)
    return oracle(0.0), sol.y0


def write_selftest_csv(reports: Sequence[OracleReport], out: str | Path) -> Path:
    rows = ((r.name, r.oracle_value, r.solver_value, r.abs_error, r.tolerance, int(r.passed)) for r in reports)
    return write_csv(out, ["name", "oracle_value", "solver_value", "abs_error", "tolerance", "pass"], rows)


def format_reports(reports: Sequence[OracleReport]) -> str:
    width = max(len(r.name) for r in reports)
    lines = [f"{'name':<{width}}  {'oracle':>14}  {'solver':>14}  {'abs_err':>10}  {'tol':>10}  result"]
    for r in reports:
        lines.append(
            f"{r.name:<{width}}  {r.oracle_value:>14.8g}  {r.solver_value:>14.8g}  "
            f"{r.abs_error:>10.3g}  {r.tolerance:>10.3g}  {'PASS' if r.passed else 'FAIL'}"
        )
    return "\n".join(lines)
