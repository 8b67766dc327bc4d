"""Special functions and distribution quantiles.

Scalar, pure-Python implementations: regularized incomplete gamma and beta
functions (series plus Lentz continued fractions), their distribution CDFs,
and quantiles found by safeguarded Newton iteration inside a bracket.
``math.erfc`` supplies the complementary error function.
"""

from __future__ import annotations

import math
from typing import Callable

from .errors import InvalidInputError

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 20000
_SQRT2 = math.sqrt(2.0)
_SQRTPI = math.sqrt(math.pi)


def _check_prob(p: float, name: str = "p") -> float:
    p = float(p)
    if not (0.0 < p < 1.0):
        raise InvalidInputError(f"{name} must lie in (0, 1), got {p!r}")
    return p


def _check_dof(dof: float) -> float:
    dof = float(dof)
    if not (dof >= 1.0 and math.isfinite(dof)):
        raise InvalidInputError(f"degrees of freedom must be >= 1, got {dof!r}")
    return dof


def _newton_bracketed(
    f: Callable[[float], float],
    fprime: Callable[[float], float],
    lo: float,
    hi: float,
    x0: float,
    increasing: bool,
) -> float:
    """Root of a monotone ``f`` on ``[lo, hi]``.

    Newton steps that leave the bracket fall back to bisection; the bracket
    is tightened from the sign of ``f`` at every iterate.
    """
    x = min(max(x0, lo), hi)
    for _ in range(500):
        fx = f(x)
        if fx == 0.0:
            return x
        if (fx > 0.0) == increasing:
            hi = x
        else:
            lo = x
        d = fprime(x)
        step_ok = False
        if d != 0.0 and math.isfinite(d):
            xn = x - fx / d
            if lo < xn < hi:
                step_ok = True
        if not step_ok:
            xn = 0.5 * (lo + hi)
        if abs(xn - x) <= 4 * _EPS * max(abs(xn), 1e-300) or hi - lo <= 4 * _EPS * max(abs(hi), 1e-300):
            return xn
        x = xn
    return x


# ---------------------------------------------------------------------------
# Error function family
# ---------------------------------------------------------------------------


def erfc(x: float) -> float:
    """Complementary error function."""
    return math.erfc(float(x))


def inverfc(y: float) -> float:
    """Inverse of :func:`erfc` on ``(0, 2)``."""
    y = float(y)
    if not (0.0 < y < 2.0):
        raise InvalidInputError(f"inverfc argument must lie in (0, 2), got {y!r}")
    if y > 1.0:
        # 2 - y is exact for y in [1, 2]
        return -inverfc(2.0 - y)
    if y == 1.0:
        return 0.0
    # log-space Newton keeps the deep tail well conditioned
    logy = math.log(y)

    def f(x: float) -> float:
        return math.log(math.erfc(x)) - logy

    def fprime(x: float) -> float:
        return -2.0 / _SQRTPI * math.exp(-x * x) / math.erfc(x)

    if y > 0.2:
        x0 = (1.0 - y) * _SQRTPI / 2.0
    else:
        t = -logy
        x0 = math.sqrt(max(t - 0.5 * math.log(math.pi * t), 0.5 * t))
    return _newton_bracketed(f, fprime, 0.0, 27.3, x0, increasing=False)


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-float(x) / _SQRT2)


def normal_quantile(p: float) -> float:
    """Standard normal quantile."""
    p = _check_prob(p)
    return -_SQRT2 * inverfc(2.0 * p)


# ---------------------------------------------------------------------------
# Incomplete gamma / chi-square
# ---------------------------------------------------------------------------


def _gamma_series(a: float, x: float) -> float:
    # lower regularized P(a, x) by series, valid for x < a + 1
    ap = a
    total = term = 1.0 / a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cf(a: float, x: float) -> float:
    # upper regularized Q(a, x) by continued fraction, valid for x >= a + 1
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gammainc_lower(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if x <= 0.0:
        return 0.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_cf(a, x)


def gammainc_upper(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x)."""
    if x <= 0.0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cf(a, x)


def chi2_cdf(x: float, dof: float) -> float:
    return gammainc_lower(0.5 * dof, 0.5 * x)


def chi2_sf(x: float, dof: float) -> float:
    return gammainc_upper(0.5 * dof, 0.5 * x)


def _chi2_logpdf(x: float, dof: float) -> float:
    k = 0.5 * dof
    return (k - 1.0) * math.log(x) - 0.5 * x - k * math.log(2.0) - math.lgamma(k)


def chi2_quantile(p: float, dof: float) -> float:
    """Quantile of the chi-square distribution with ``dof`` degrees of freedom."""
    p = _check_prob(p)
    dof = _check_dof(dof)
    upper = p > 0.5
    target = 1.0 - p if upper else p

    def f(x: float) -> float:
        if x <= 0.0:
            return (1.0 if upper else 0.0) - target
        return (chi2_sf(x, dof) if upper else chi2_cdf(x, dof)) - target

    def fprime(x: float) -> float:
        if x <= 0.0:
            return 0.0
        d = math.exp(_chi2_logpdf(x, dof))
        return -d if upper else d

    hi = max(dof, 1.0)
    while (chi2_sf(hi, dof) > target) if upper else (chi2_cdf(hi, dof) < target):
        hi *= 2.0
    # Wilson-Hilferty starting point
    z = normal_quantile(p)
    c = 2.0 / (9.0 * dof)
    x0 = dof * max(1.0 - c + z * math.sqrt(c), 1e-3) ** 3
    return _newton_bracketed(f, fprime, 0.0, hi, x0, increasing=not upper)


# ---------------------------------------------------------------------------
# Incomplete beta / Student t
# ---------------------------------------------------------------------------


def _beta_cf(a: float, b: float, x: float) -> float:
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h


def betainc(a: float, b: float, x: float, xc: float | None = None) -> float:
    """Regularized incomplete beta I_x(a, b).

    ``xc`` optionally supplies ``1 - x`` computed without cancellation.
    """
    if xc is None:
        xc = 1.0 - x
    if x <= 0.0:
        return 0.0
    if xc <= 0.0:
        return 1.0
    log_front = (
        a * math.log(x) + b * math.log(xc) + math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
    )
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _beta_cf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _beta_cf(b, a, xc) / b


def _t_tail(t: float, dof: float) -> float:
    # P(T > t) for t >= 0
    t2 = t * t
    x = dof / (dof + t2)
    xc = t2 / (dof + t2)
    return 0.5 * betainc(0.5 * dof, 0.5, x, xc)


def t_cdf(t: float, dof: float) -> float:
    t = float(t)
    if t >= 0.0:
        return 1.0 - _t_tail(t, dof)
    return _t_tail(-t, dof)


def _t_logpdf(t: float, dof: float) -> float:
    return (
        math.lgamma(0.5 * (dof + 1.0))
        - math.lgamma(0.5 * dof)
        - 0.5 * math.log(dof * math.pi)
        - 0.5 * (dof + 1.0) * math.log1p(t * t / dof)
    )


def t_quantile(p: float, dof: float) -> float:
    """Quantile of Student's t distribution with ``dof`` degrees of freedom."""
    p = _check_prob(p)
    dof = _check_dof(dof)
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return -t_quantile(1.0 - p, dof) if 1.0 - p < 1.0 else -math.inf
    target = 1.0 - p

    def f(t: float) -> float:
        return _t_tail(t, dof) - target

    def fprime(t: float) -> float:
        return -math.exp(_t_logpdf(t, dof))

    hi = 1.0
    while _t_tail(hi, dof) > target:
        hi *= 2.0
    return _newton_bracketed(f, fprime, 0.0, hi, min(normal_quantile(p), hi), increasing=False)
