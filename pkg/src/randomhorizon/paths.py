"""Stochastic inputs: Brownian paths, exact GBM asset paths, claim values and
default times built from an exponential clock.

Random numbers come from fixed-size path blocks, each with its own
``SeedSequence(seed, spawn_key=(stream, block))``. Output therefore depends
only on ``(seed, n_steps, n_paths)``, never on the number of worker threads.
The Brownian, default-clock and off-grid-increment streams are independent.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from ._io import write_csv
from .model import IntensitySpec, ValidatedConfig, validate

BLOCK_SIZE = 8192

STREAM_BROWNIAN = 0
STREAM_DEFAULT_CLOCK = 1
STREAM_TAU_INCREMENT = 2


class ResourceError(MemoryError):
    """Requested ensemble exceeds the configured memory cap."""


@dataclass(frozen=True)
class PathEnsemble:
    times: np.ndarray  # (N+1,)
    dW: np.ndarray  # (M, N)
    W: np.ndarray  # (M, N+1)
    S: np.ndarray  # (M, N+1)
    xi_a: np.ndarray  # (M, N+1)
    phi: np.ndarray  # (M,) exponential(1) default clocks
    tau_normal: np.ndarray  # (M,) standard normals for the off-grid claim value
    seed_used: int

    @property
    def n_paths(self) -> int:
        return self.dW.shape[0]

    @property
    def n_steps(self) -> int:
        return self.dW.shape[1]


@dataclass(frozen=True)
class DefaultSample:
    phi: float
    tau_n: float
    hit_before_T: bool
    n: int


def _block_rng(seed: int, stream: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream, block))))


def _blocks(n_paths: int) -> list[tuple[int, int, int]]:
    return [
        (b, start, min(start + BLOCK_SIZE, n_paths))
        for b, start in enumerate(range(0, n_paths, BLOCK_SIZE))
    ]


def _fill_blocks(n_paths: int, threads: int, fill) -> None:
    blocks = _blocks(n_paths)
    if threads == 1 or len(blocks) == 1:
        for blk in blocks:
            fill(*blk)
        return
    with ThreadPoolExecutor(max_workers=None if threads <= 0 else threads) as pool:
        list(pool.map(lambda blk: fill(*blk), blocks))


def claim_values(vc: ValidatedConfig, S: np.ndarray) -> np.ndarray:
    """Claim paid at default, evaluated on asset values ``S`` at grid nodes."""
    claim = vc.claim
    if claim.kind == "put":
        return np.maximum(claim.strike - S, 0.0)
    if claim.kind == "zero":
        return np.zeros_like(S)
    samples = np.asarray(claim.samples, dtype=float)
    return np.broadcast_to(samples, S.shape).copy()


def generate_ensemble(
    config: ValidatedConfig, threads: int = 1, seed: int | None = None
) -> PathEnsemble:
    """Simulate ``M`` Brownian paths on the uniform grid and everything derived from them.

    ``threads`` only changes wall time (0 means one worker per CPU). ``seed``
    overrides the configured seed.
    """
    vc = validate(config)
    M, N, dt = vc.disc.n_paths, vc.n_steps, vc.dt
    if M * (N + 1) > vc.config.max_grid_cells:
        raise ResourceError(
            f"{M} paths x {N + 1} nodes exceeds the cap of {vc.config.max_grid_cells} cells"
        )
    seed = vc.disc.seed if seed is None else int(seed)

    dW = np.empty((M, N))
    phi = np.empty(M)
    tau_normal = np.empty(M)
    sqrt_dt = math.sqrt(dt)

    def fill(b: int, lo: int, hi: int) -> None:
        dW[lo:hi] = _block_rng(seed, STREAM_BROWNIAN, b).standard_normal((hi - lo, N)) * sqrt_dt
        phi[lo:hi] = _block_rng(seed, STREAM_DEFAULT_CLOCK, b).standard_exponential(hi - lo)
        tau_normal[lo:hi] = _block_rng(seed, STREAM_TAU_INCREMENT, b).standard_normal(hi - lo)

    _fill_blocks(M, threads, fill)

    W = np.zeros((M, N + 1))
    np.cumsum(dW, axis=1, out=W[:, 1:])
    t = vc.times
    m = vc.market
    S = m.s0 * np.exp(m.sigma * W + (m.mu - 0.5 * m.sigma**2) * t)
    return PathEnsemble(
        times=t,
        dW=dW,
        W=W,
        S=S,
        xi_a=claim_values(vc, S),
        phi=phi,
        tau_normal=tau_normal,
        seed_used=seed,
    )


# ---------------------------------------------------------------------------
# Default time
# ---------------------------------------------------------------------------


def default_times(phi: np.ndarray, n: int, T: float) -> np.ndarray:
    """Vectorized first time the truncated hazard of ``1/(T-s)`` reaches ``phi``, capped at T."""
    phi = np.asarray(phi, dtype=float)
    if np.any(phi <= 0):
        raise ValueError("phi must be > 0")
    if n == 0:
        return np.full_like(phi, T)
    nT = n * T
    if nT < 1.0:
        # 1/(T-s) > n everywhere, so the hazard is the constant n
        return np.minimum(phi / n, T)
    branch = math.log(nT)
    early = T * -np.expm1(-np.minimum(phi, branch))
    late = np.minimum((phi + nT - 1.0 - branch) / n, T)
    return np.where(phi <= branch, early, late)


def sample_default_time(phi: float, n: int, T: float) -> DefaultSample:
    tau = float(default_times(np.asarray(phi), n, T))
    return DefaultSample(phi=float(phi), tau_n=tau, hit_before_T=tau < T, n=int(n))


def default_times_for(spec: IntensitySpec, phi: np.ndarray, T: float) -> np.ndarray:
    """Default times for either intensity kind, using ``spec.truncation_n``."""
    if spec.kind == "singular":
        return default_times(phi, spec.truncation_n, T)
    phi = np.asarray(phi, dtype=float)
    rate = 0.0 if spec.truncation_n == 0 else min(spec.level, float(spec.truncation_n))
    if rate == 0.0:
        return np.full_like(phi, T)
    return np.minimum(phi / rate, T)


def survival_probability(n: int, T: float) -> float:
    """Probability that the truncated singular-intensity default happens after T."""
    if n < 0 or T <= 0:
        raise ValueError("need n >= 0 and T > 0")
    if n == 0:
        return 1.0
    if T <= 1.0 / n:
        return math.exp(-n * T)
    return math.exp(-1.0) / (n * T)


def survival_probability_for(spec: IntensitySpec, T: float) -> float:
    if spec.kind == "singular":
        return survival_probability(spec.truncation_n, T)
    rate = 0.0 if spec.truncation_n == 0 else min(spec.level, float(spec.truncation_n))
    return math.exp(-rate * T)


# ---------------------------------------------------------------------------
# Off-grid claim value
# ---------------------------------------------------------------------------


def claim_at_time(vc: ValidatedConfig, ensemble: PathEnsemble, path: int, tau: float) -> float:
    """Claim value of one path at an arbitrary time ``tau`` in [0, T].

    The asset is advanced from the left grid node by an exact GBM step whose
    Gaussian comes from the path's own off-grid stream; deterministic claims
    are interpolated linearly between nodes.
    """
    dt = vc.dt
    k = min(int(math.floor(tau / dt + 1e-12)), vc.n_steps)
    h = max(tau - k * dt, 0.0)
    claim = vc.claim
    if claim.kind == "zero":
        return 0.0
    if claim.kind == "deterministic":
        return float(np.interp(tau, ensemble.times, np.asarray(claim.samples, dtype=float)))
    if h == 0.0:
        return float(ensemble.xi_a[path, k])
    m = vc.market
    s_tau = ensemble.S[path, k] * math.exp(
        m.sigma * math.sqrt(h) * ensemble.tau_normal[path] + (m.mu - 0.5 * m.sigma**2) * h
    )
    return max(claim.strike - s_tau, 0.0)


def write_paths_csv(ensemble: PathEnsemble, out: str | Path, paths: Iterable[int]) -> Path:
    """Dump selected paths, one row per (path, grid index)."""
    rows = (
        (p, k, t, ensemble.W[p, k], ensemble.S[p, k], ensemble.xi_a[p, k])
        for p in paths
        for k, t in enumerate(ensemble.times)
    )
    return write_csv(out, ["path", "k", "t", "W", "S", "xi_a"], rows)
