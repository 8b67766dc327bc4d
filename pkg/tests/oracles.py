"""Independent reference implementations for the classical baselines."""

import numpy as np
from scipy import optimize, stats
from statsmodels.stats.meta_analysis import combine_effects


def dl_oracle(Y, V, alpha):
    """DerSimonian-Laird via statsmodels, interval assembled with scipy's t."""
    res = combine_effects(Y, V, method_re="chi2")
    # statsmodels leaves a negative moment estimate unclamped
    if res.tau2 > 0:
        nu, ate, var = float(res.tau2), float(res.mean_effect_re), float(res.var_eff_w_re)
    else:
        nu, ate, var = 0.0, float(res.mean_effect_fe), float(res.var_eff_w_fe)
    half = stats.t.ppf(1 - alpha / 2, len(Y) - 1) * np.sqrt(nu + var)
    return nu, ate, (ate - half, ate + half)


def reml_score(nu, Y, V):
    w = 1.0 / (V + nu)
    mu = w @ Y / w.sum()
    return float(np.sum(w**2 * (Y - mu) ** 2) - w.sum() + np.sum(w**2) / w.sum())


def reml_hksj_oracle(Y, V, alpha):
    """REML by root-finding on the score equation, then the HKSJ interval."""
    if reml_score(0.0, Y, V) <= 0:
        nu = 0.0
    else:
        hi = 1.0
        while reml_score(hi, Y, V) > 0:
            hi *= 2
        nu = optimize.brentq(reml_score, 0.0, hi, args=(Y, V), xtol=1e-15, rtol=1e-15)
    w = 1.0 / (V + nu)
    ate = float(w @ Y / w.sum())
    var = float(np.sum(w * (Y - ate) ** 2) / ((len(Y) - 1) * w.sum()))
    half = stats.t.ppf(1 - alpha / 2, len(Y) - 1) * np.sqrt(nu + var)
    return nu, ate, (ate - half, ate + half)
