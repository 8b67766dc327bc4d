"""Fully-conformal kernel ridge regression under idiocentricity.

The training and test residuals are absolute values of affine functions of
the candidate response ``u``. When the test residual's slope dominates every
training residual's slope, ``r(u) <= R_i(u)`` holds exactly on an interval
``L_i``, and the conformal set is bracketed by order statistics of the
``L_i`` endpoints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IdiocentricityViolation, InvalidInputError
from .kernel_core import Precomputation, PriorBundle, conformal_rank

DENOM_RTOL = 1e-14


@dataclass(frozen=True)
class PredictionInterval:
    lower: float
    upper: float
    method: str
    alpha: float
    confidence: float
    n: int = 0
    lam: float = float("nan")
    tau: int = 0

    def __post_init__(self):
        if not (self.lower <= self.upper or (self.lower == -np.inf and self.upper == np.inf)):
            raise ValueError(f"malformed interval ({self.lower}, {self.upper})")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def is_finite(self) -> bool:
        return bool(np.isfinite(self.lower) and np.isfinite(self.upper))

    def contains(self, value: float) -> bool:
        return bool(self.lower <= value <= self.upper)


@dataclass(frozen=True)
class ResidualPair:
    R: np.ndarray
    r: float


@dataclass(frozen=True)
class CandidateIntervals:
    lower: np.ndarray
    upper: np.ndarray

    def contains(self, u: float) -> np.ndarray:
        return (self.lower <= u) & (u <= self.upper)


def residuals_at(pre: Precomputation, u: float) -> ResidualPair:
    """Posterior-standardized residuals with the test response set to ``u``."""
    R = np.abs(pre.A * u + pre.B) / pre.S
    r = abs(pre.a * u + pre.b) / pre.s
    return ResidualPair(R=R, r=float(r))


def candidate_intervals(pre: Precomputation) -> CandidateIntervals:
    """The intervals ``L_i = {u : r(u) <= R_i(u)}``, endpoints sorted."""
    Sa = pre.S * pre.a
    sA = pre.s * pre.A
    if np.any(Sa - sA <= DENOM_RTOL * Sa):
        raise IdiocentricityViolation("a/s must exceed A_i/S_i for every training point")
    first = (-pre.S * pre.b - pre.s * pre.B) / (Sa + sA)
    second = (-pre.S * pre.b + pre.s * pre.B) / (Sa - sA)
    return CandidateIntervals(lower=np.minimum(first, second), upper=np.maximum(first, second))


def order_statistic_interval(lower: np.ndarray, upper: np.ndarray, tau: int) -> tuple[float, float]:
    """tau-th largest lower endpoint and tau-th smallest upper endpoint."""
    up = np.sort(upper, kind="stable")[tau - 1]
    lo = np.sort(lower, kind="stable")[::-1][tau - 1]
    return float(lo), float(up)


def predict_noise_free(pre: Precomputation, method: str = "conformal-krr") -> PredictionInterval:
    """Conformal interval for a noise-free response at the test point."""
    if pre.tau > pre.n:
        return PredictionInterval(-np.inf, np.inf, method, pre.alpha, 1.0 - pre.alpha, pre.n, pre.lam, pre.tau)
    cand = candidate_intervals(pre)
    lo, up = order_statistic_interval(cand.lower, cand.upper, pre.tau)
    return PredictionInterval(lo, up, method, pre.alpha, 1.0 - pre.alpha, pre.n, pre.lam, pre.tau)


# ---------------------------------------------------------------------------
# Brute-force oracle
# ---------------------------------------------------------------------------


def refit_residuals(bundle: PriorBundle, U, u: float, lam: float | None = None) -> tuple[np.ndarray, float]:
    """Residuals from an explicit augmented KRR refit at test response ``u``.

    Uses a dense inverse and the textbook posterior formulas, sharing no
    code with :func:`~conformeta.kernel_core.precompute`.
    """
    Kbar = bundle.Kbar
    n1 = Kbar.shape[0]
    if lam is None:
        lam = float(np.max(np.diag(Kbar)))
    inv = np.linalg.inv(Kbar / lam + np.eye(n1))
    Ubar = np.append(np.asarray(U, dtype=float), u)
    post_mean = (Kbar / lam) @ inv @ Ubar + inv @ bundle.Mbar
    post_cov = lam * np.linalg.inv(Kbar + lam * np.eye(n1)) @ Kbar
    scale = np.sqrt(np.diag(post_cov))
    resid = np.abs(Ubar - post_mean) / scale
    return resid[:-1], float(resid[-1])


def oracle_conformal_set(bundle: PriorBundle, U, alpha: float, grid, lam: float | None = None) -> np.ndarray:
    """Grid points admitted by the exact full-conformal rank test.

    A candidate ``u`` is kept when fewer than ``tau`` training residuals are
    strictly smaller than the test residual, refitting at every grid point.
    """
    grid = np.asarray(grid, dtype=float)
    if not np.all(np.isfinite(grid)) or np.any(np.diff(grid) < 0):
        raise InvalidInputError("grid must be finite and sorted")
    U = np.asarray(U, dtype=float)
    n = U.size
    tau = conformal_rank(alpha, n)
    Kbar = bundle.Kbar
    n1 = n + 1
    if lam is None:
        lam = float(np.max(np.diag(Kbar)))
    # the refit is linear in u; build it once, then evaluate every grid point
    inv = np.linalg.inv(Kbar / lam + np.eye(n1))
    smoother = (Kbar / lam) @ inv
    post_cov = lam * np.linalg.inv(Kbar + lam * np.eye(n1)) @ Kbar
    scale = np.sqrt(np.diag(post_cov))
    base = np.append(U, 0.0)
    offset = base - smoother @ base - inv @ bundle.Mbar
    e = np.zeros(n1)
    e[-1] = 1.0
    slope = e - smoother @ e
    resid = np.abs(offset[:, None] + slope[:, None] * grid[None, :]) / scale[:, None]
    n_below = np.sum(resid[:-1] < resid[-1][None, :], axis=0)
    return grid[n_below < tau]


def default_grid(U, num: int = 10_000, spread: float = 10.0) -> np.ndarray:
    U = np.asarray(U, dtype=float)
    sd = float(np.std(U)) or 1.0
    return np.linspace(U.min() - spread * sd, U.max() + spread * sd, num)
