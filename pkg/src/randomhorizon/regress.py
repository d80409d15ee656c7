"""Least-squares estimates of conditional expectations on a polynomial basis.

The basis is ``1, x, ..., x**degree`` in the standardized state
``(x - mean) / std``. The Gram matrix is accumulated over fixed-size row
chunks in a fixed order, so coefficients are bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import scipy.linalg

CHUNK_ROWS = 16384
CONDITION_LIMIT = 1e12
RIDGE_FACTOR = 1e-10


class SingularRegressionError(np.linalg.LinAlgError):
    def __init__(self, time_index: int | None, detail: str = ""):
        self.time_index = time_index
        super().__init__(f"regression design is singular at time index {time_index}{': ' + detail if detail else ''}")


@dataclass(frozen=True)
class RegressionBasis:
    degree: int = 3
    state: Literal["asset", "brownian"] = "brownian"

    def features(self, x: np.ndarray, center: float = 0.0, scale: float = 1.0) -> np.ndarray:
        z = (np.asarray(x, dtype=float) - center) / scale
        out = np.empty((z.shape[0], self.degree + 1))
        out[:, 0] = 1.0
        for j in range(1, self.degree + 1):
            np.multiply(out[:, j - 1], z, out=out[:, j])
        return out


@dataclass(frozen=True)
class FittedRegressor:
    coefficients: np.ndarray
    condition_diagnostic: float
    time_index: int | None
    center: float = 0.0
    scale: float = 1.0
    ridge_applied: bool = False
    basis: RegressionBasis = field(default_factory=RegressionBasis)


def _standardization(states: np.ndarray) -> tuple[float, float]:
    center = float(states.mean())
    scale = float(states.std())
    # numerically constant state (e.g. t = 0): features collapse to the constant
    if not np.isfinite(scale) or scale <= 1e-12 * max(1.0, abs(center)):
        return center, 0.0
    return center, scale


class Projector:
    """Normal-equation solver for one design matrix, reusable across targets.

    Backward schemes regress many targets on the same states at a given time;
    the factorization is computed once here.
    """

    def __init__(self, states: np.ndarray, basis: RegressionBasis, time_index: int | None = None):
        states = np.asarray(states, dtype=float)
        if not np.all(np.isfinite(states)):
            raise ValueError("states must be finite")
        self.basis = basis
        self.time_index = time_index
        self.center, self.scale = _standardization(states)
        degree = basis.degree if self.scale > 0 else 0
        self._basis_used = RegressionBasis(degree, basis.state)
        if states.shape[0] <= self._basis_used.degree + 1:
            raise ValueError(
                f"need more than degree + 1 = {self._basis_used.degree + 1} samples, got {states.shape[0]}"
            )
        self._states = states
        design = self.design
        gram = self._accumulate(design.T, design)
        cond = float(np.linalg.cond(gram)) if gram.shape[0] > 1 else 1.0
        self.ridge_applied = False
        if not np.isfinite(cond) or cond > CONDITION_LIMIT:
            gram = gram + RIDGE_FACTOR * np.trace(gram) * np.eye(gram.shape[0])
            self.ridge_applied = True
        self.condition = cond
        try:
            self._chol = scipy.linalg.cho_factor(gram, lower=True, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise SingularRegressionError(time_index, str(exc)) from exc

    @property
    def design(self) -> np.ndarray:
        # rebuilt on demand: caching one projector per time step stays cheap
        return self._basis_used.features(self._states, self.center, self.scale or 1.0)

    def _accumulate(self, left: np.ndarray, right: np.ndarray) -> np.ndarray:
        # left: (p, M), right: (M, q); chunks summed in index order
        out = np.zeros((left.shape[0], right.shape[1]))
        for lo in range(0, right.shape[0], CHUNK_ROWS):
            out += left[:, lo : lo + CHUNK_ROWS] @ right[lo : lo + CHUNK_ROWS]
        return out

    def coefficients(self, targets: np.ndarray) -> np.ndarray:
        """Least-squares coefficients; ``targets`` may be (M,) or (M, q)."""
        return self._solve(self.design, targets)

    def _solve(self, design: np.ndarray, targets: np.ndarray) -> np.ndarray:
        t = np.asarray(targets, dtype=float)
        rhs = self._accumulate(design.T, t.reshape(t.shape[0], -1))
        coef = scipy.linalg.cho_solve(self._chol, rhs)
        return coef.reshape((coef.shape[0],) + t.shape[1:])

    def project(self, targets: np.ndarray) -> np.ndarray:
        """Fitted values of ``targets`` at the training states."""
        design = self.design
        return design @ self._solve(design, targets)

    def fit(self, targets: np.ndarray) -> FittedRegressor:
        return FittedRegressor(
            coefficients=self.coefficients(targets),
            condition_diagnostic=self.condition,
            time_index=self.time_index,
            center=self.center,
            scale=self.scale,
            ridge_applied=self.ridge_applied,
            basis=self._basis_used,
        )


def fit(
    states: np.ndarray,
    targets: np.ndarray,
    basis: RegressionBasis,
    time_index: int | None = None,
) -> FittedRegressor:
    """Regress ``targets`` on the basis evaluated at ``states``."""
    targets = np.asarray(targets, dtype=float)
    if targets.shape[0] != np.shape(states)[0]:
        raise ValueError("states and targets must have the same length")
    return Projector(states, basis, time_index).fit(targets)


def predict(reg: FittedRegressor, states: np.ndarray) -> np.ndarray:
    coef = np.asarray(reg.coefficients, dtype=float)
    z = (np.asarray(states, dtype=float) - reg.center) / (reg.scale or 1.0)
    return np.vander(np.atleast_1d(z), coef.shape[0], increasing=True) @ coef
