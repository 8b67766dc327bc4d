"""Conformal meta-analysis predictors for noisy observed effects.

* :func:`predict_trial` covers a future trial's observed effect ``y`` given
  its within-trial variance ``v``, by subtracting ``eta`` times the expected
  noise contribution from squared residuals.
* :func:`predict_effect` covers the true effect ``u`` by evaluating the trial
  interval at ``v = 0``; the confidence cost is reported, not corrected.
* :func:`predict_clean_effect` covers ``u`` by widening the plain conformal
  interval on ``Y`` by the worst case over a chi-square noise ellipsoid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import statfns
from .conformal_krr import PredictionInterval, order_statistic_interval, predict_noise_free
from .errors import IdiocentricityViolation, InfeasibleConfidenceError, InvalidInputError
from .kernel_core import Precomputation

DENOM_RTOL = 1e-14


@dataclass(frozen=True)
class NoiseCorrection:
    D: np.ndarray
    d: float
    Z: np.ndarray
    z: float
    rho: np.ndarray
    eta: float


@dataclass(frozen=True)
class CleanEffectGeometry:
    rho_chi: float
    G: np.ndarray
    omega: float


def _check_variances(V, n: int) -> np.ndarray:
    V = np.asarray(V, dtype=float).reshape(-1)
    if V.size != n:
        raise InvalidInputError(f"expected {n} variances, got {V.size}")
    if not np.all(np.isfinite(V)) or np.any(V < 0):
        raise InvalidInputError("within-trial variances must be finite and >= 0")
    return V


def _check_eta(eta: float) -> float:
    eta = float(eta)
    if not (eta >= 0 and math.isfinite(eta)):
        raise InvalidInputError(f"eta must be finite and >= 0, got {eta!r}")
    return eta


def noise_correction(pre: Precomputation, V, v: float, eta: float) -> NoiseCorrection:
    """Expected noise contributions to training/test squared residuals."""
    V = _check_variances(V, pre.n)
    IQ = np.eye(pre.n) - pre.Q
    D = np.square(IQ) @ V
    d = float(np.square(pre.q) @ V)
    Z = D + np.square(pre.A) * v
    z = d + pre.a**2 * v
    S2, s2 = np.square(pre.S), pre.s**2
    rho = eta * (Z * s2 - z * S2)
    return NoiseCorrection(D=D, d=d, Z=Z, z=z, rho=rho, eta=eta)


def trial_intervals(pre: Precomputation, nc: NoiseCorrection) -> tuple[np.ndarray, np.ndarray]:
    """Per-training-point intervals ``G_i +/- H_i`` where ``r <= R_i``."""
    S2, s2 = np.square(pre.S), pre.s**2
    aSAs = pre.a**2 * S2 - np.square(pre.A) * s2
    if np.any(aSAs <= DENOM_RTOL * pre.a**2 * S2):
        raise IdiocentricityViolation("(a S_i)^2 must exceed (A_i s)^2 for every training point")
    center = (pre.A * pre.B * s2 - pre.a * pre.b * S2) / aSAs
    radicand = s2 * S2 * np.square(pre.A * pre.b - pre.a * pre.B) - nc.rho * aSAs
    half = np.sqrt(np.maximum(0.0, radicand)) / aSAs
    return center - half, center + half


def predict_trial(pre: Precomputation, V, v: float, eta: float, method: str = "cma-trial") -> PredictionInterval:
    """Conformal interval for a new trial's observed effect.

    Parameters
    ----------
    pre : Precomputation
        Built from the observed training effects ``Y``.
    V : array_like
        Training within-trial variances.
    v : float
        The new trial's within-trial variance.
    eta : float
        Noise-correction multiplier; 0 disables correction.
    """
    v = float(v)
    if not (v >= 0 and math.isfinite(v)):
        raise InvalidInputError(f"test variance v must be finite and >= 0, got {v!r}")
    eta = _check_eta(eta)
    V = _check_variances(V, pre.n)
    if pre.tau > pre.n:
        return PredictionInterval(-np.inf, np.inf, method, pre.alpha, 1.0 - pre.alpha, pre.n, pre.lam, pre.tau)
    nc = noise_correction(pre, V, v, eta)
    if not np.any(nc.rho):
        # with no correction the quadratic roots coincide with the linear ones
        out = predict_noise_free(pre, method)
        return PredictionInterval(out.lower, out.upper, method, pre.alpha, 1.0 - pre.alpha, pre.n, pre.lam, pre.tau)
    lower, upper = trial_intervals(pre, nc)
    lo, up = order_statistic_interval(lower, upper, pre.tau)
    return PredictionInterval(lo, up, method, pre.alpha, 1.0 - pre.alpha, pre.n, pre.lam, pre.tau)


def effective_confidence(alpha: float, eta: float) -> float:
    """Coverage of the true effect by the ``v = 0`` trial interval."""
    return 1.0 - alpha / ((1.0 - alpha) * statfns.erfc(math.sqrt(eta / 2.0)))


def eta_for_confidence(alpha: float, c: float) -> float:
    """Noise correction giving effective confidence ``1 - c * alpha``."""
    if not (0.0 < alpha < 1.0):
        raise InvalidInputError(f"alpha must lie in (0, 1), got {alpha!r}")
    arg = 1.0 / (c * (1.0 - alpha))
    if not (c > 0 and arg <= 1.0) or c * alpha >= 1.0:
        raise InfeasibleConfidenceError(f"no eta reaches confidence 1 - {c}*{alpha}")
    if arg == 1.0:
        return 0.0
    return 2.0 * statfns.inverfc(arg) ** 2


def min_trials_for_confidence(alpha: float) -> int:
    """Smallest n with ceil((1 - alpha)(n + 1)) <= n."""
    n = 1
    while math.ceil((1.0 - alpha) * (n + 1) - 1e-12 * (n + 1)) > n:
        n += 1
    return n


def predict_effect(pre: Precomputation, V, eta: float, method: str = "cma") -> PredictionInterval:
    """Interval for the true effect: the trial interval at ``v = 0``."""
    eta = _check_eta(eta)
    conf = effective_confidence(pre.alpha, eta)
    if conf <= 0:
        raise InfeasibleConfidenceError(
            f"eta={eta} is too large for alpha={pre.alpha}: effective confidence {conf:.4g}"
        )
    out = predict_trial(pre, V, 0.0, eta, method)
    return PredictionInterval(out.lower, out.upper, method, pre.alpha, conf, pre.n, pre.lam, pre.tau)


@lru_cache(maxsize=256)
def _chi2_level(p: float, dof: int) -> float:
    return statfns.chi2_quantile(p, dof)


def clean_effect_geometry(pre: Precomputation, V, delta: float) -> CleanEffectGeometry:
    """Worst-case endpoint shift over the noise ellipsoid.

    Rows of ``G`` are the sensitivities of the 2n candidate endpoints to the
    noise vector; ``omega`` is the largest row norm of ``G diag(sqrt(rho V))``.
    """
    if not (0.0 < delta < 1.0):
        raise InvalidInputError(f"delta must lie in (0, 1), got {delta!r}")
    V = _check_variances(V, pre.n)
    rho = _chi2_level(1.0 - delta, pre.n)
    # endpoint sensitivities use the unflipped slopes A_raw = -q
    A_raw = -pre.q
    S = pre.S[:, None]
    IQ = np.eye(pre.n) - pre.Q
    top = (-S * pre.q[None, :] + pre.s * IQ) / (S * pre.a + pre.s * A_raw[:, None])
    bottom = (-S * pre.q[None, :] - pre.s * IQ) / (S * pre.a - pre.s * A_raw[:, None])
    G = np.vstack([top, bottom])
    omega = float(np.max(np.linalg.norm(G * np.sqrt(rho * V)[None, :], axis=1)))
    return CleanEffectGeometry(rho_chi=rho, G=G, omega=omega)


def predict_clean_effect(pre: Precomputation, V, delta: float, method: str = "cma-clean") -> PredictionInterval:
    """Interval for the true effect when trials are large.

    ``pre`` must be built from the observed ``Y``. The returned interval is
    the plain conformal interval on ``Y`` widened by ``omega`` on each side.
    """
    conf = (1.0 - pre.alpha) * (1.0 - delta)
    if pre.tau > pre.n:
        return PredictionInterval(-np.inf, np.inf, method, pre.alpha, conf, pre.n, pre.lam, pre.tau)
    geom = clean_effect_geometry(pre, V, delta)
    base = predict_noise_free(pre, method)
    return PredictionInterval(
        base.lower - geom.omega, base.upper + geom.omega, method, pre.alpha, conf, pre.n, pre.lam, pre.tau
    )
