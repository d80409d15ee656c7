"""Value function, optimal constrained strategy, wealth, indifference prices
and truncation-level sweeps."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence
import warnings

import numpy as np

from ._io import write_csv
from .bsde import TruncatedBsdeSolution, jackknife_se, solve_truncated
from .model import ClaimSpec, ConstraintSet, ValidatedConfig, validate
from .paths import PathEnsemble, generate_ensemble, survival_probability_for


def value_function(x: float, y0: float, alpha: float) -> float:
    """Optimal expected exponential utility from initial wealth ``x``."""
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    return -float(np.exp(-alpha * (x - y0)))


def optimal_strategy(
    z_path: np.ndarray,
    theta: Sequence[float],
    alpha: float,
    constraint: ConstraintSet,
    tau_n: float,
    times: np.ndarray,
) -> np.ndarray:
    """Amount invested on each grid interval: ``Pi_C(Z + theta/alpha)`` up to the default, 0 after.

    ``z_path`` holds one value per interval start ``times[:-1]`` (shape (N,) for
    d = 1, else (N, d)).
    """
    theta = np.asarray(theta, dtype=float)
    z = np.asarray(z_path, dtype=float)
    zv = z[:, None] if theta.size == 1 and z.ndim == 1 else z
    p = constraint.project(zv + theta / alpha)
    alive = np.asarray(times, dtype=float)[: zv.shape[0]] <= tau_n
    p = np.where(alive[:, None], p, 0.0)
    return p[:, 0] if theta.size == 1 and z.ndim == 1 else p


def simulate_wealth(
    strategy: np.ndarray, dW: np.ndarray, theta: Sequence[float], dt: float, x: float = 1.0
) -> np.ndarray:
    """Euler wealth ``X_{k+1} = X_k + p_k (dW_k + theta dt)`` along one path (d = 1)."""
    p = np.asarray(strategy, dtype=float)
    th = float(np.asarray(theta, dtype=float).reshape(-1)[0])
    increments = p * (np.asarray(dW, dtype=float) + th * dt)
    out = np.empty(p.size + 1)
    out[0] = x
    np.cumsum(increments, out=out[1:])
    out[1:] += x
    return out


def _zero_claim(vc: ValidatedConfig) -> ValidatedConfig:
    return vc.with_claim(ClaimSpec("zero", strike=vc.claim.strike, xi_b=0.0))


def indifference_price(config: ValidatedConfig, ensemble: PathEnsemble, n: int) -> float:
    """Cash amount equating utility with and without the claim, at truncation ``n``.

    Both solves share ``ensemble`` (common random numbers).
    """
    vc = validate(config)
    with_claim = solve_truncated(vc, ensemble, n)
    without = solve_truncated(_zero_claim(vc), ensemble, n)
    return with_claim.y0 - without.y0


@dataclass(frozen=True)
class SweepRow:
    n: int
    p_n: float
    y0: float
    V: float
    P_n: float
    y0_zero: float
    y0_se: float
    P_se: float
    y0_jackknife: np.ndarray = field(repr=False)
    P_jackknife: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    x: float
    driver_variant: str

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def paired_se(self, i: int, j: int, what: str = "y0") -> float:
        """Jackknife SE of the difference between rows ``i`` and ``j`` (same path blocks)."""
        a = getattr(self.rows[i], f"{what}_jackknife")
        b = getattr(self.rows[j], f"{what}_jackknife")
        return jackknife_se(a - b)


def normalize_levels(levels: Iterable[int], n_max: int | None = None) -> list[int]:
    """Sorted unique levels; duplicates are dropped with a warning."""
    raw = [int(v) for v in levels]
    if not raw:
        raise ValueError("at least one truncation level is required")
    if any(v < 0 for v in raw):
        raise ValueError("truncation levels must be >= 0")
    uniq = sorted(set(raw))
    if len(uniq) != len(raw):
        warnings.warn(f"duplicate truncation levels dropped: {raw} -> {uniq}", stacklevel=2)
    if n_max is not None and uniq[-1] > n_max:
        raise ValueError(f"truncation level {uniq[-1]} exceeds 1/dt = {n_max}")
    return uniq


def sweep(
    config: ValidatedConfig,
    levels: Iterable[int],
    x: float = 1.0,
    ensemble: PathEnsemble | None = None,
    threads: int = 1,
) -> SweepResult:
    """Solve with and without the claim at every level on one shared ensemble."""
    from .model import max_truncation

    vc = validate(config)
    levels = normalize_levels(levels, max_truncation(vc.T, vc.n_steps))
    if ensemble is None:
        ensemble = generate_ensemble(vc, threads=threads)
    zero = _zero_claim(vc)
    rows = []
    for n in levels:
        sol: TruncatedBsdeSolution = solve_truncated(vc, ensemble, n)
        sol0 = solve_truncated(zero, ensemble, n)
        p_jk = sol.y0_jackknife - sol0.y0_jackknife
        rows.append(
            SweepRow(
                n=n,
                p_n=survival_probability_for(vc.with_truncation(n).intensity, vc.T),
                y0=sol.y0,
                V=value_function(x, sol.y0, vc.alpha),
                P_n=sol.y0 - sol0.y0,
                y0_zero=sol0.y0,
                y0_se=sol.y0_se,
                P_se=jackknife_se(p_jk),
                y0_jackknife=sol.y0_jackknife,
                P_jackknife=p_jk,
            )
        )
    return SweepResult(rows=tuple(rows), x=x, driver_variant=vc.config.driver_variant)


def write_sweep_csv(result: SweepResult, out: str | Path) -> Path:
    rows = ((r.n, r.p_n, r.y0, r.V, r.P_n) for r in result.rows)
    return write_csv(out, ["n", "p_n", "y0", "V", "P_n"], rows)


def write_strategy_csv(times: np.ndarray, p_star: np.ndarray, p_nodefault: np.ndarray, out: str | Path) -> Path:
    rows = ((k, times[k], p_star[k], p_nodefault[k]) for k in range(len(p_star)))
    return write_csv(out, ["k", "t", "p_star", "p_star_nodefault"], rows)


def write_wealth_csv(times: np.ndarray, X: np.ndarray, out: str | Path) -> Path:
    return write_csv(out, ["k", "t", "X"], ((k, times[k], X[k]) for k in range(len(X))))
