"""Driver and backward Picard scheme for the truncated Brownian BSDE

    Y_t = xi_T - int_t^T [g(s, Z_s) + (lambda_s ^ n) (1 - exp(alpha (xi_s - Y_s))) / alpha] ds
              - int_t^T Z_s dW_s,

    g(s, z) = -(alpha/2) dist_C(z + theta/alpha)^2 + z.theta + |theta|^2 / (2 alpha).

Conditional expectations are least-squares regressions on the Markov state
(see :mod:`randomhorizon.regress`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from ._io import write_csv
from .model import ConstraintSet, IntensitySpec, ValidatedConfig, lambda_at, validate
from .paths import PathEnsemble, claim_values
from .regress import Projector, RegressionBasis

EXP_LIMIT = 700.0
JACKKNIFE_BLOCKS = 10


class ConvergenceError(RuntimeError):
    """Picard iteration did not reach the tolerance; carries the residual trace."""

    def __init__(self, message: str, residuals: list[float]):
        self.residuals = list(residuals)
        trace = ", ".join(f"{r:.3e}" for r in residuals)
        super().__init__(f"{message}; |y0| gaps per iteration: [{trace}]")


class DriverOverflowError(ArithmeticError):
    """alpha * u exceeded the exponent guard: the iteration is diverging."""


@dataclass(frozen=True)
class DriverParams:
    alpha: float
    theta: tuple[float, ...]
    constraint: ConstraintSet = field(default_factory=ConstraintSet)
    intensity: IntensitySpec = field(default_factory=IntensitySpec)
    T: float = 1.0
    variant: Literal["alpha", "half"] = "alpha"

    @classmethod
    def from_config(cls, vc: ValidatedConfig) -> "DriverParams":
        return cls(
            alpha=vc.alpha,
            theta=tuple(vc.market.theta),
            constraint=vc.constraint,
            intensity=vc.intensity,
            T=vc.T,
            variant=vc.config.driver_variant,
        )

    @property
    def constant_term(self) -> float:
        sq = float(np.dot(self.theta, self.theta))
        return sq / (2.0 * self.alpha) if self.variant == "alpha" else sq / 2.0


def _as_vectors(z, d: int) -> np.ndarray:
    # d == 1: one scalar per point; otherwise the last axis is the dimension
    z = np.asarray(z, dtype=float)
    return z[..., None] if d == 1 else z


def driver_gb(params: DriverParams, t: float, z) -> np.ndarray | float:
    """Brownian part of the driver; ``z`` is scalar per point when d = 1, else (..., d)."""
    theta = np.asarray(params.theta, dtype=float)
    if theta.size == 1 and params.constraint.kind == "unconstrained":
        out = np.asarray(z, dtype=float) * theta[0] + params.constant_term
        return float(out) if np.ndim(out) == 0 else out
    zv = _as_vectors(z, theta.size)
    out = zv @ theta + params.constant_term
    if params.constraint.kind != "unconstrained":
        dist = params.constraint.distance(zv + theta / params.alpha)
        out = out - 0.5 * params.alpha * dist**2
    return float(out) if np.ndim(out) == 0 else out


def default_term(u, alpha: float) -> np.ndarray:
    """``(1 - exp(alpha u)) / alpha`` evaluated without cancellation."""
    au = alpha * np.asarray(u, dtype=float)
    if np.any(au > EXP_LIMIT):
        raise DriverOverflowError(f"alpha*u = {float(np.max(au)):.1f} exceeds {EXP_LIMIT}")
    return -np.expm1(au) / alpha


def driver_full(params: DriverParams, t: float, z, u, n: int) -> np.ndarray | float:
    """Full driver with the default term at truncation level ``n``."""
    spec = IntensitySpec(params.intensity.kind, int(n), params.intensity.level)
    lam = lambda_at(spec, t, params.T)
    out = driver_gb(params, t, z)
    if lam != 0.0:
        out = out + lam * default_term(u, params.alpha)
    return float(out) if np.ndim(out) == 0 else out


def implicit_step(
    rhs: np.ndarray, xi: np.ndarray, c: float, alpha: float, start: np.ndarray | None = None
) -> np.ndarray:
    """Solve ``y + c (1 - exp(alpha (xi - y))) / alpha = rhs`` for y, elementwise.

    The left side is increasing and concave in y, so Newton lands left of the
    root after at most one step and then increases monotonically to it, from
    any ``start``.
    """
    rhs = np.asarray(rhs, dtype=float)
    if c == 0.0:
        return rhs.copy()
    y = rhs.copy() if start is None else np.array(start, dtype=float)
    for _ in range(100):
        arg = alpha * (xi - y)
        if np.any(arg > EXP_LIMIT):
            raise DriverOverflowError(f"alpha*u = {float(np.max(arg)):.1f} exceeds {EXP_LIMIT}")
        em1 = np.expm1(arg)
        step = (y - c * em1 / alpha - rhs) / (1.0 + c * (em1 + 1.0))
        y = y - step
        if np.max(np.abs(step)) <= 1e-14 * (1.0 + np.max(np.abs(y))):
            return y
    raise ConvergenceError("Newton solve of the implicit step did not converge", [])


@dataclass(frozen=True)
class TruncatedBsdeSolution:
    Y: np.ndarray  # (M, N+1)
    Z: np.ndarray  # (M, N)
    y0: float
    picard_iters_used: int
    picard_residuals: np.ndarray  # |y0^L - y0^(L-1)|
    sup_residuals: np.ndarray  # max |Y^L - Y^(L-1)| over the grid
    truncation_n: int
    y0_jackknife: np.ndarray  # leave-one-block-out estimates of y0
    times: np.ndarray
    driver_variant: str = "alpha"
    y_update: str = "implicit"
    ridge_fallbacks: int = 0

    @property
    def y0_se(self) -> float:
        return jackknife_se(self.y0_jackknife)


def jackknife_se(leave_out: np.ndarray) -> float:
    """Standard error from leave-one-block-out estimates."""
    v = np.asarray(leave_out, dtype=float)
    b = v.size
    return float(math.sqrt((b - 1) / b * np.sum((v - v.mean()) ** 2)))


def terminal_values(vc: ValidatedConfig, xi_a: np.ndarray) -> np.ndarray:
    """Brownian terminal condition: xi_a at T under the singular intensity, xi_b otherwise."""
    if vc.intensity.kind == "singular":
        return xi_a[:, -1].copy()
    return np.full(xi_a.shape[0], vc.claim.xi_b)


def apriori_bound(vc: ValidatedConfig) -> float:
    """Ceiling ``e^{MT}(|xi_b| + MT + |xi_a|_inf)`` on |Y| with M = max(|theta|, |g(.,0,0)|)."""
    params = DriverParams.from_config(vc)
    lip = max(float(np.linalg.norm(vc.theta)), params.constant_term)
    claim = vc.claim
    if claim.kind == "put":
        sup_xi = claim.strike
    elif claim.kind == "zero":
        sup_xi = 0.0
    else:
        sup_xi = float(np.max(np.abs(claim.samples)))
    T = vc.T
    return math.exp(lip * T) * (abs(claim.xi_b) + lip * T + sup_xi)


def _regression_states(vc: ValidatedConfig, ensemble: PathEnsemble) -> np.ndarray:
    return ensemble.W if vc.config.regression_state == "brownian" else ensemble.S


def solve_truncated(
    config: ValidatedConfig,
    ensemble: PathEnsemble,
    n: int | None = None,
) -> TruncatedBsdeSolution:
    """Solve the BSDE truncated at level ``n`` on the given path ensemble.

    Each Picard iteration is one backward sweep. ``Z`` at ``t_k`` regresses
    ``Y_{k+1} dW_k / dt`` on the state; the driver uses the previous iterate's
    ``Z``. With ``y_update="implicit"`` the default term is solved exactly in
    ``Y_k`` at every node; ``"picard"`` lags it like ``Z``.
    """
    vc = validate(config)
    if n is not None:
        vc = vc.with_truncation(n)
    n = vc.intensity.truncation_n
    M, N, dt = ensemble.n_paths, ensemble.n_steps, vc.dt
    if N != vc.n_steps or M != vc.disc.n_paths:
        raise ValueError("ensemble was generated for a different grid or path count")

    params = DriverParams.from_config(vc)
    alpha = vc.alpha
    xi = claim_values(vc, ensemble.S)
    terminal = terminal_values(vc, xi)
    states = _regression_states(vc, ensemble)
    basis = RegressionBasis(vc.disc.basis_degree, vc.config.regression_state)
    times = vc.times
    lam = np.array([lambda_at(vc.intensity, t, vc.T) for t in times[:-1]])
    implicit = vc.config.y_update == "implicit"

    # time-major copies: rows are contiguous per grid node
    states = np.ascontiguousarray(states.T)
    dW = np.ascontiguousarray(ensemble.dW.T)
    xi = np.ascontiguousarray(xi.T)
    Y_prev = np.repeat(terminal[None, :], N + 1, axis=0)
    Z_prev = np.zeros((N, M))
    y0_prev = float(terminal.mean())
    gaps: list[float] = []
    sups: list[float] = []
    ridge = 0
    projectors: list[Projector | None] = [None] * N

    for it in range(1, vc.disc.picard_max_iters + 1):
        Y = np.empty((N + 1, M))
        Z = np.empty((N, M))
        Y[N] = terminal
        targets = np.empty((M, 2))
        try:
            for k in range(N - 1, -1, -1):
                if projectors[k] is None:
                    projectors[k] = Projector(states[k], basis, time_index=k)
                    ridge += projectors[k].ridge_applied
                targets[:, 0] = Y[k + 1]
                np.multiply(Y[k + 1], dW[k], out=targets[:, 1])
                fitted = projectors[k].project(targets)
                Z[k] = fitted[:, 1] / dt
                rhs = fitted[:, 0] - dt * driver_gb(params, times[k], Z_prev[k])
                if implicit:
                    Y[k] = implicit_step(rhs, xi[k], dt * lam[k], alpha, start=Y_prev[k])
                elif lam[k] == 0.0:
                    Y[k] = rhs
                else:
                    Y[k] = rhs - dt * lam[k] * default_term(xi[k] - Y_prev[k], alpha)
        except DriverOverflowError as exc:
            raise ConvergenceError(f"Picard iteration {it} diverged ({exc})", gaps) from exc
        y0 = float(Y[0].mean())
        if not (np.isfinite(y0) and np.all(np.isfinite(Y))):
            raise ConvergenceError(f"Picard iteration {it} produced non-finite values", gaps)
        gaps.append(abs(y0 - y0_prev))
        sups.append(float(np.max(np.abs(Y - Y_prev))))
        Y_prev, Z_prev, y0_prev = Y, Z, y0
        if gaps[-1] < vc.disc.picard_tol:
            break
    else:
        raise ConvergenceError(
            f"no convergence to {vc.disc.picard_tol:g} within {vc.disc.picard_max_iters} iterations",
            gaps,
        )

    Y, Z = np.ascontiguousarray(Y.T), np.ascontiguousarray(Z.T)
    return TruncatedBsdeSolution(
        Y=Y,
        Z=Z,
        y0=y0,
        picard_iters_used=it,
        picard_residuals=np.array(gaps),
        sup_residuals=np.array(sups),
        truncation_n=n,
        y0_jackknife=_jackknife_y0(params, vc, Y, ensemble.dW[:, 0], xi[0, 0], lam[0]),
        times=times,
        driver_variant=vc.config.driver_variant,
        y_update=vc.config.y_update,
        ridge_fallbacks=ridge,
    )


def _jackknife_y0(params, vc, Y, dW0, xi0, lam0) -> np.ndarray:
    # the first step starts from a deterministic state, so y0 is a smooth
    # function of two path means; recompute it with each block left out
    dt, M = vc.dt, Y.shape[0]
    edges = np.linspace(0, M, JACKKNIFE_BLOCKS + 1).astype(int)
    y1, y1dw = Y[:, 1], Y[:, 1] * dW0
    s_y, s_z = y1.sum(), y1dw.sum()
    out = np.empty(JACKKNIFE_BLOCKS)
    for b in range(JACKKNIFE_BLOCKS):
        lo, hi = edges[b], edges[b + 1]
        m = M - (hi - lo)
        ey = (s_y - y1[lo:hi].sum()) / m
        z0 = (s_z - y1dw[lo:hi].sum()) / m / dt
        rhs = ey - dt * driver_gb(params, 0.0, np.array([z0]))
        out[b] = implicit_step(np.atleast_1d(rhs), np.array([xi0]), dt * lam0, vc.alpha)[0]
    return out


def write_solution_csv(sol: TruncatedBsdeSolution, path_index: int, out: str | Path) -> Path:
    """One path of (Y, Z); Z is blank at the terminal node."""
    N = sol.Z.shape[1]
    rows = (
        (k, sol.times[k], sol.Y[path_index, k], sol.Z[path_index, k] if k < N else None)
        for k in range(N + 1)
    )
    return write_csv(out, ["k", "t", "Y", "Z"], rows)
