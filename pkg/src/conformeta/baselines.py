"""Classical random-effects meta-analysis intervals.

These ignore trial features and predict a single interval around a pooled
effect estimate. They serve as comparison baselines.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import statfns
from .conformal_krr import PredictionInterval
from .errors import InvalidInputError


@dataclass(frozen=True)
class HeterogeneityFit:
    nu_hat: float
    ate_hat: float
    var_ate_hat: float
    weights: np.ndarray
    iterations: int = 0
    converged: bool = True


def _check(Y, V, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    Y = np.asarray(Y, dtype=float).reshape(-1)
    V = np.asarray(V, dtype=float).reshape(-1)
    if Y.size != V.size:
        raise InvalidInputError(f"Y and V lengths differ ({Y.size} vs {V.size})")
    if Y.size < 2:
        raise InvalidInputError("at least two trials are required")
    if Y.size == 2:
        warnings.warn("prediction interval with n = 2 uses a t quantile with 1 degree of freedom", stacklevel=3)
    if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(V))):
        raise InvalidInputError("Y and V must be finite")
    if np.any(V <= 0):
        raise InvalidInputError("within-trial variances must be strictly positive")
    if not (0.0 < alpha < 1.0):
        raise InvalidInputError(f"alpha must lie in (0, 1), got {alpha!r}")
    return Y, V


def pooled(Y: np.ndarray, V: np.ndarray, nu: float) -> tuple[np.ndarray, float]:
    """Inverse-variance weights and weighted mean for heterogeneity ``nu``."""
    w = 1.0 / (V + nu)
    return w, float(w @ Y / w.sum())


def _interval(fit: HeterogeneityFit, n: int, alpha: float, method: str) -> PredictionInterval:
    t = statfns.t_quantile(1.0 - alpha / 2.0, n - 1)
    half = t * math.sqrt(fit.nu_hat + fit.var_ate_hat)
    return PredictionInterval(fit.ate_hat - half, fit.ate_hat + half, method, alpha, 1.0 - alpha, n)


def dersimonian_laird(Y, V, alpha: float = 0.05) -> tuple[HeterogeneityFit, PredictionInterval]:
    """Moment estimator of heterogeneity with the classical prediction interval."""
    Y, V = _check(Y, V, alpha)
    n = Y.size
    w0 = 1.0 / V
    S1 = w0.sum()
    S2 = (w0**2).sum()
    ybar = float(w0 @ Y / S1)
    Q = float(w0 @ (Y - ybar) ** 2)
    nu = max(0.0, (Q - (n - 1)) / (S1 - S2 / S1))
    w, ate = pooled(Y, V, nu)
    fit = HeterogeneityFit(nu_hat=nu, ate_hat=ate, var_ate_hat=1.0 / w.sum(), weights=w)
    return fit, _interval(fit, n, alpha, "dl")


def reml_hksj(
    Y, V, alpha: float = 0.05, tol: float = 1e-8, max_iter: int = 1000
) -> tuple[HeterogeneityFit, PredictionInterval]:
    """REML heterogeneity by fixed-point iteration, HKSJ variance of the mean.

    Non-convergence is reported through ``fit.converged`` rather than raised.
    """
    Y, V = _check(Y, V, alpha)
    if not tol > 0:
        raise InvalidInputError("tol must be positive")
    n = Y.size
    nu = 0.0
    w, ate = pooled(Y, V, nu)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w2 = w**2
        new = float(w2 @ ((Y - ate) ** 2 - V) / w2.sum() + 1.0 / w.sum())
        new = max(0.0, new)
        step = abs(new - nu)
        nu = new
        w, ate = pooled(Y, V, nu)
        if step <= tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"REML did not converge in {max_iter} iterations", stacklevel=2)
    var = float(((Y - ate) ** 2 * w).sum() / ((n - 1) * w.sum()))
    fit = HeterogeneityFit(nu_hat=nu, ate_hat=ate, var_ate_hat=var, weights=w, iterations=it, converged=converged)
    return fit, _interval(fit, n, alpha, "hksj")


def bayesian_trial(Y, V, v_new: float, alpha: float = 0.05, nu_plugin: float | None = None) -> PredictionInterval:
    """Normal posterior predictive interval for a new trial's observed effect.

    ``nu_plugin`` defaults to the REML estimate.
    """
    Y, V = _check(Y, V, alpha)
    if not (v_new >= 0 and math.isfinite(v_new)):
        raise InvalidInputError(f"v_new must be finite and >= 0, got {v_new!r}")
    if nu_plugin is None:
        nu_plugin = reml_hksj(Y, V, alpha)[0].nu_hat
    if nu_plugin < 0:
        raise InvalidInputError("nu_plugin must be >= 0")
    w, ate = pooled(Y, V, nu_plugin)
    z = statfns.normal_quantile(1.0 - alpha / 2.0)
    half = z * math.sqrt(1.0 / w.sum() + nu_plugin + v_new)
    return PredictionInterval(ate - half, ate + half, "bayes", alpha, 1.0 - alpha, Y.size)
