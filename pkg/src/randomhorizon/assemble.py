"""Solution with the default time on one path: the Brownian solution before the
default, the claim value frozen after it, and the jump size ``U``."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._io import write_csv
from .bsde import TruncatedBsdeSolution
from .model import ValidatedConfig
from .paths import DefaultSample, PathEnsemble, claim_at_time, claim_values, default_times_for


class ConsistencyError(ValueError):
    pass


@dataclass(frozen=True)
class GSolution:
    times: np.ndarray  # (N+1,)
    tau_n: float
    defaulted: bool  # default strictly before T
    Y: np.ndarray  # (N+1,)
    Z: np.ndarray  # (N,)
    U: np.ndarray  # (N+1,)
    post_default_value: float  # claim value at tau_n
    jump_index: int  # left grid node of tau_n
    y_before: float  # Brownian Y at the left node, standing in for Y(tau-)

    @property
    def jump(self) -> float:
        """``Y(tau) - Y(tau-)`` read off the assembled grid values."""
        after = int(np.searchsorted(self.times, self.tau_n, side="left"))
        return float(self.Y[min(after, self.Y.size - 1)] - self.y_before)

    @property
    def u_at_tau(self) -> float:
        return self.post_default_value - self.y_before

    def default_indicator(self) -> np.ndarray:
        """``1{t_k >= tau}`` on the grid when default happens before T."""
        if not self.defaulted:
            return np.zeros(self.times.shape, dtype=bool)
        return self.times >= self.tau_n


def assemble_g_solution(
    bsde: TruncatedBsdeSolution,
    path_index: int,
    default: DefaultSample,
    xi_a_path: np.ndarray,
    xi_a_tau: float | None = None,
) -> GSolution:
    """Stop the Brownian solution of one path at ``default.tau_n``.

    ``xi_a_tau`` is the claim value at the (generally off-grid) default time;
    when omitted it is interpolated linearly from ``xi_a_path``.
    """
    if default.n != bsde.truncation_n:
        raise ConsistencyError(
            f"default time sampled at n={default.n} but BSDE solved at n={bsde.truncation_n}"
        )
    M = bsde.Y.shape[0]
    if not 0 <= path_index < M:
        raise IndexError(f"path_index {path_index} outside [0, {M})")
    times = bsde.times
    N = times.size - 1
    dt = times[1] - times[0]
    yb = bsde.Y[path_index]
    zb = bsde.Z[path_index]
    xi_a_path = np.asarray(xi_a_path, dtype=float)
    tau = default.tau_n
    if xi_a_tau is None:
        xi_a_tau = float(np.interp(tau, times, xi_a_path))
    k_star = min(int(math.floor(tau / dt + 1e-12)), N)

    if not default.hit_before_T:
        return GSolution(
            times=times,
            tau_n=tau,
            defaulted=False,
            Y=yb.copy(),
            Z=zb.copy(),
            U=xi_a_path - yb,
            post_default_value=float(xi_a_tau),
            jump_index=k_star,
            y_before=float(yb[k_star]),
        )

    before = times < tau
    upto = times <= tau
    Y = np.where(before, yb, xi_a_tau)
    Z = np.where(upto[:-1], zb, 0.0)
    U = np.where(upto, xi_a_path - yb, 0.0)
    return GSolution(
        times=times,
        tau_n=tau,
        defaulted=True,
        Y=Y,
        Z=Z,
        U=U,
        post_default_value=float(xi_a_tau),
        jump_index=k_star,
        y_before=float(yb[k_star]),
    )


def default_sample_for_path(vc: ValidatedConfig, ensemble: PathEnsemble, path_index: int) -> DefaultSample:
    """Default time of one path from its exponential clock, at the config's truncation level."""
    phi = float(ensemble.phi[path_index])
    tau = float(default_times_for(vc.intensity, np.array([phi]), vc.T)[0])
    return DefaultSample(phi=phi, tau_n=tau, hit_before_T=tau < vc.T, n=vc.intensity.truncation_n)


def assemble_path(
    vc: ValidatedConfig, ensemble: PathEnsemble, bsde: TruncatedBsdeSolution, path_index: int
) -> GSolution:
    """Default time, off-grid claim value and stopped solution for one ensemble path."""
    sample = default_sample_for_path(vc.with_truncation(bsde.truncation_n), ensemble, path_index)
    xi_path = bsde_claim_path(vc, ensemble, path_index)
    xi_tau = claim_at_time(vc, ensemble, path_index, sample.tau_n)
    return assemble_g_solution(bsde, path_index, sample, xi_path, xi_tau)


def bsde_claim_path(vc: ValidatedConfig, ensemble: PathEnsemble, path_index: int) -> np.ndarray:
    return claim_values(vc, ensemble.S[path_index : path_index + 1])[0]


def write_g_solution_csv(sol: GSolution, out: str | Path) -> Path:
    N = sol.Z.size
    flags = sol.default_indicator()
    rows = (
        (k, sol.times[k], sol.Y[k], sol.Z[k] if k < N else None, sol.U[k], int(flags[k]))
        for k in range(N + 1)
    )
    return write_csv(out, ["k", "t", "Y", "Z", "U", "defaulted"], rows)
