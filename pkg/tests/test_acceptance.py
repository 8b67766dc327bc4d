"""Acceptance gate: one test group per numbered criterion.

Every check records a PASS/FAIL line (printed immediately and again in the
pytest terminal summary). Run standalone with ``python3 -m tests.test_acceptance``.
"""

import math
import sys
import time
import warnings
from fractions import Fraction

import numpy as np
import pytest

from conformeta.baselines import dersimonian_laird, reml_hksj
from conformeta.conformal_krr import default_grid, oracle_conformal_set, predict_noise_free
from conformeta.kernel_core import PriorBundle, assemble_prior, KernelSpec, precompute
from conformeta.meta_predict import (
    effective_confidence,
    eta_for_confidence,
    min_trials_for_confidence,
    predict_clean_effect,
    predict_effect,
    predict_trial,
)
from conformeta.sim_harness import (
    CLINICAL_SCALE,
    SimConfig,
    alpha_for_confidence,
    mc_error,
    run_simulation,
    synthetic_dataset,
)

from .instances import feature_bundle, hand_bundle, random_bundle, random_psd
from .oracles import dl_oracle, reml_hksj_oracle

# criterion -> list of (part, passed, detail)
RESULTS: dict[int, list[tuple[str, bool, str]]] = {}


def record(criterion: int, part: str, passed: bool, detail: str) -> bool:
    RESULTS.setdefault(criterion, []).append((part, passed, detail))
    print(f"{'PASS' if passed else 'FAIL'} criterion {criterion}{part}: {detail}")
    return passed


def summary_lines() -> list[str]:
    lines = []
    for k in sorted(RESULTS):
        parts = RESULTS[k]
        ok = all(p for _, p, _ in parts)
        detail = "; ".join(f"{name or 'main'} {'ok' if p else 'FAILED'} ({d})" for name, p, d in parts)
        lines.append(f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}")
    return lines


@pytest.fixture(scope="module")
def clinical():
    return synthetic_dataset(4000, np.random.default_rng(2024), location=CLINICAL_SCALE[0], scale=CLINICAL_SCALE[1])


def coverage_floor(target: float, n: int) -> float:
    return target - 3.0 * mc_error(target, n)


# ---------------------------------------------------------------------------
# 1. hand case
# ---------------------------------------------------------------------------


def test_c1_hand_case():
    start = time.perf_counter()
    bundle, U = hand_bundle()
    pre = precompute(bundle, U, 0.6)
    expected = {"q0": 0.5, "a": 0.5, "b": 0.0, "s": math.sqrt(0.5), "lam": 1.0}
    errs = [abs(getattr(pre, k) - v) for k, v in expected.items()]
    errs += [abs(pre.Q[0, 0] - 0.5), abs(pre.q[0]), abs(pre.A[0]), abs(pre.B[0] - 1.0), abs(pre.S[0] - math.sqrt(0.5))]
    nf = predict_noise_free(pre)
    tr = predict_trial(pre, [0.0], 0.0, 1.0)
    cl = predict_clean_effect(pre, [1.0], 0.05)
    errs += [abs(nf.lower + 2), abs(nf.upper - 2), abs(tr.lower + 2), abs(tr.upper - 2)]
    errs += [abs(cl.lower + 3.9599639845400545), abs(cl.upper - 3.9599639845400545)]
    elapsed = time.perf_counter() - start
    ok = max(errs) <= 1e-6 and elapsed < 1.0 and pre.tau == 1
    record(1, "", ok, f"max error {max(errs):.2e}, clean ({cl.lower:.4f}, {cl.upper:.4f}), {elapsed * 1e3:.1f} ms")
    assert ok


# ---------------------------------------------------------------------------
# 2. grid oracle equivalence
# ---------------------------------------------------------------------------


def _instance(seed: int):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 21))
    kind = seed % 3
    if kind == 0:
        return random_bundle(rng, n)
    return feature_bundle(rng, n, kind="gaussian" if kind == 1 else "laplace")


def test_c2_grid_oracle():
    start = time.perf_counter()
    contained = close = 0
    for seed in range(100):
        bundle, U = _instance(seed)
        alpha = (0.2, 0.3)[seed % 2]
        iv = predict_noise_free(precompute(bundle, U, alpha))
        grid = default_grid(U, num=10_000)
        kept = oracle_conformal_set(bundle, U, alpha, grid)
        step = grid[1] - grid[0]
        if kept.size == 0 or (kept.min() >= iv.lower - 1e-9 and kept.max() <= iv.upper + 1e-9):
            contained += 1
        if kept.size and kept.min() - iv.lower <= 3 * step and iv.upper - kept.max() <= 3 * step:
            close += 1
    elapsed = time.perf_counter() - start
    ok = contained == 100 and close >= 95 and elapsed < 120
    record(2, "", ok, f"contained {contained}/100, within 3 grid steps {close}/100, {elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------------------------
# 3. idiocentricity
# ---------------------------------------------------------------------------


def test_c3_idiocentricity():
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    violations = 0
    worst_q0 = 0.0
    for i in range(1000):
        n = int(rng.integers(1, 31))
        rank = int(rng.integers(1, n + 2)) if i % 2 else None
        Kbar = random_psd(rng, n + 1, rank) * 10.0 ** rng.uniform(-3, 3)
        bundle = PriorBundle.from_augmented(rng.normal(size=n + 1), Kbar)
        pre = precompute(bundle, rng.normal(size=n), 0.5)
        worst_q0 = max(worst_q0, pre.q0)
        if pre.q0 > 0.5 + 1e-12 or not np.all(pre.a / pre.s > pre.A / pre.S):
            violations += 1
    elapsed = time.perf_counter() - start
    ok = violations == 0 and elapsed < 30
    record(3, "", ok, f"{violations} violations in 1000 Grams, max q0 {worst_q0:.6f}, {elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------------------------
# 4. growth bound
# ---------------------------------------------------------------------------


def _on_prior_fit_response(bundle: PriorBundle) -> float:
    """The n = 1 response making the base interval a single point."""
    lam = float(np.max(np.diag(bundle.Kbar)))
    Qbar = np.linalg.solve(bundle.Kbar + lam * np.eye(2), bundle.Kbar)
    tbar = lam * np.linalg.solve(bundle.Kbar + lam * np.eye(2), bundle.Mbar)
    Q, q, q0 = Qbar[0, 0], Qbar[1, 0], Qbar[1, 1]
    t, t0 = tbar
    # A b - a B = 0 with A = -q, a = 1 - q0, B = (1 - Q) U - t, b = -q U - t0
    return float((-q * t0 - (1 - q0) * t) / (q * q - (1 - q0) * (1 - Q)))


def _unclamped_sq_radius(pre, V, eta: float) -> float:
    """Squared half-width of the single n = 1 interval at v = 0, before clamping at zero."""
    S2, s2 = pre.S[0] ** 2, pre.s**2
    A, B = pre.A[0], pre.B[0]
    den = pre.a**2 * S2 - A**2 * s2
    D = (1 - pre.Q[0, 0]) ** 2 * V[0]
    d = pre.q[0] ** 2 * V[0]
    rho = eta * (D * s2 - d * S2)
    return (s2 * S2 * (A * pre.b - pre.a * B) ** 2 - rho * den) / den**2


def test_c4_growth_bound():
    rng = np.random.default_rng(4)
    violations = 0
    n1_err = 0.0
    n1_cases = 0
    for _ in range(500):
        n = int(rng.integers(1, 21))
        bundle, Y = random_bundle(rng, n)
        V = rng.exponential(size=n)
        eta = float(rng.uniform(0, 3))
        v = float(rng.exponential(3.0))
        pre = precompute(bundle, Y, max(0.2, 1.0 / (n + 1)))
        at0 = predict_trial(pre, V, 0.0, eta)
        at_v = predict_trial(pre, V, v, eta)
        slack = math.sqrt(eta * v)
        tol = 1e-9 * (1 + abs(at0.lower) + abs(at0.upper) + slack)
        if at_v.lower < at0.lower - slack - tol or at_v.upper > at0.upper + slack + tol:
            violations += 1
        if n == 1:
            # a single interval: the centre is fixed and the (unclamped) squared
            # radius grows by exactly eta v
            hv = at_v.width / 2
            r0 = _unclamped_sq_radius(pre, V, eta)
            centre_shift = abs((at0.lower + at0.upper) - (at_v.lower + at_v.upper)) / 2
            n1_err = max(n1_err, abs(hv**2 - max(0.0, r0 + eta * v)) / (1 + eta * v + abs(r0)), centre_shift)
            n1_cases += 1
    # zero-width base interval: the widening is exactly sqrt(eta v)
    literal_err = 0.0
    for _ in range(100):
        Kbar = random_psd(rng, 2)
        bundle = PriorBundle.from_augmented(rng.normal(size=2), Kbar)
        pre = precompute(bundle, [_on_prior_fit_response(bundle)], 0.5)
        eta, v = float(rng.uniform(0.1, 3)), float(rng.uniform(0.1, 10))
        at0 = predict_trial(pre, [0.0], 0.0, eta)
        at_v = predict_trial(pre, [0.0], v, eta)
        widen = max(at0.lower - at_v.lower, at_v.upper - at0.upper)
        literal_err = max(literal_err, abs(widen - math.sqrt(eta * v)))
    record(4, "a", violations == 0, f"{violations} containment violations over 500 triples")
    record(4, "b", n1_err <= 1e-8 and n1_cases > 0, f"n=1 squared radius equals max(0, r0 + eta*v), max error {n1_err:.1e} over {n1_cases} cases")
    record(4, "c", literal_err <= 1e-8, f"n=1 zero-width base: widening equals sqrt(eta*v), max error {literal_err:.1e}")
    assert violations == 0 and n1_err <= 1e-8 and literal_err <= 1e-8


# ---------------------------------------------------------------------------
# 5. reduction identities
# ---------------------------------------------------------------------------


def test_c5_reduction_identities():
    rng = np.random.default_rng(5)
    trial_same = clean_same = 0
    for i in range(100):
        bundle, Y = _instance(1000 + i)
        pre = precompute(bundle, Y, 0.25)
        base = predict_noise_free(pre)
        trial = predict_trial(pre, rng.exponential(size=bundle.n), float(rng.exponential()), 0.0)
        clean = predict_clean_effect(pre, np.zeros(bundle.n), 0.05)
        trial_same += (trial.lower, trial.upper) == (base.lower, base.upper)
        clean_same += (clean.lower, clean.upper) == (base.lower, base.upper)
    ok = trial_same == 100 and clean_same == 100
    record(5, "", ok, f"eta=0 trial bitwise equal {trial_same}/100, V=0 clean bitwise equal {clean_same}/100")
    assert ok


# ---------------------------------------------------------------------------
# 6. coverage suites
# ---------------------------------------------------------------------------

COVERAGE = dict(n_train=50, n_test=50, n_splits=100, prior_error=0.2)
_coverage_clock = [0.0]


def _coverage(data, method: str, **kw) -> tuple[float, int]:
    start = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = run_simulation(SimConfig(methods=(method,), **{**COVERAGE, **kw}), data)
    _coverage_clock[0] += time.perf_counter() - start
    stats = report.methods[method]
    return stats.coverage, stats.n_evaluated


def test_c6a_noise_free_coverage(clinical):
    ok_all = True
    for alpha in (0.05, 0.1, 0.2):
        cov, n = _coverage(clinical, "krr", alpha=alpha, effect_noise=0.5)
        floor = coverage_floor(1 - alpha, n)
        ok = cov >= floor and n >= 5000
        ok_all &= record(6, f"a[alpha={alpha}]", ok, f"coverage {cov:.4f} >= {floor:.4f} over {n}")
    assert ok_all


def test_c6b_trial_coverage(clinical):
    ok_all = True
    for noise in (0.0, 0.5, 2.0, 10.0):
        cov, n = _coverage(clinical, "cma-trial", alpha=0.05, trial_eta=1.0, effect_noise=noise)
        floor = coverage_floor(0.95, n)
        ok = cov >= floor and n >= 5000
        ok_all &= record(6, f"b[noise={noise}]", ok, f"coverage of y {cov:.4f} >= {floor:.4f} over {n}")
    assert ok_all


def test_c6c_effect_coverage(clinical):
    ok_all = True
    alpha = 0.1
    target = (1 - 2 * alpha) / (1 - alpha)
    for noise in (0.5, 10.0):
        cov, n = _coverage(clinical, "cma", alpha=alpha, eta=0.0, effect_noise=noise)
        floor = coverage_floor(target, n)
        ok = cov >= floor and n >= 5000
        ok_all &= record(6, f"c[noise={noise}]", ok, f"coverage of u {cov:.4f} >= {floor:.4f} over {n}")
    assert ok_all


def test_c6d_clean_coverage(clinical):
    # V scale is sqrt(1e-24 * 500), about 2e-11, so every V_i is far below 1e-8
    alpha, delta = 0.1, 0.05
    cov, n = _coverage(clinical, "cma-clean", alpha=alpha, delta=delta, effect_noise=1e-24)
    floor = coverage_floor((1 - alpha) * (1 - delta), n)
    ok = cov >= floor and n >= 5000 and _coverage_clock[0] < 600
    record(6, "d", ok, f"coverage of u {cov:.4f} >= {floor:.4f} over {n}; suite time {_coverage_clock[0]:.1f} s")
    assert ok


# ---------------------------------------------------------------------------
# 7. confidence arithmetic
# ---------------------------------------------------------------------------


def _exact_min_trials(alpha: Fraction) -> int:
    n = 1
    while math.ceil((1 - alpha) * (n + 1)) > n:
        n += 1
    return n


def test_c7_confidence_arithmetic():
    conf = effective_confidence(0.05, 0.0)
    round_trip = max(
        abs(effective_confidence(a, eta_for_confidence(a, c)) - (1 - c * a))
        for a in (0.01, 0.025, 0.05, 0.1, 0.2)
        for c in (1.2, 1.5, 2.0, 3.0)
        if c * a < 1 and c * (1 - a) > 1
    )
    ok = abs(conf - 0.94737) <= 1e-4 and round_trip <= 1e-10
    record(7, "a", ok, f"effective confidence {conf:.6f}, eta round-trip error {round_trip:.1e}")
    assert ok


@pytest.mark.xfail(strict=True, reason="exact threshold is n >= 39; see README")
def test_c7_feasibility_threshold():
    alpha = 0.025  # c = 2 and a 95% final level
    computed = min_trials_for_confidence(alpha)
    exact = _exact_min_trials(Fraction(1, 40))
    eta_zero = min_trials_for_confidence(alpha_for_confidence(0.95, 0.0))
    ok = computed == 40
    record(
        7, "b", ok,
        f"smallest feasible n is {computed} (exact rational {exact}), claimed 40; eta=0 needs {eta_zero}",
    )
    assert ok


# ---------------------------------------------------------------------------
# 8. baselines
# ---------------------------------------------------------------------------


def test_c8_baseline_oracles():
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(3, 80))
        V = rng.uniform(0.05, 2.0, n)
        Y = rng.normal(0.5, np.sqrt(V + rng.choice([0.0, rng.uniform(0.05, 2.0)])))
        fit, iv = dersimonian_laird(Y, V, 0.1)
        nu, ate, (lo, up) = dl_oracle(Y, V, 0.1)
        worst = max(worst, abs(fit.nu_hat - nu), abs(fit.ate_hat - ate), abs(iv.lower - lo), abs(iv.upper - up))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit, iv = reml_hksj(Y, V, 0.1, tol=1e-14)
        nu, ate, (lo, up) = reml_hksj_oracle(Y, V, 0.1)
        worst = max(worst, abs(fit.nu_hat - nu), abs(fit.ate_hat - ate), abs(iv.lower - lo), abs(iv.upper - up))
    ok = worst <= 1e-8
    record(8, "a", ok, f"max deviation from reference oracles {worst:.1e} over 50 instances")
    assert ok


def test_c8_baseline_coverage_model_matched():
    rng = np.random.default_rng(88)
    reps, n, alpha, nu = 5000, 200, 0.1, 1.0
    hits = {"dl": 0, "hksj": 0}
    for _ in range(reps):
        V = rng.uniform(0.1, 1.0, n)
        Y = rng.normal(1.0, np.sqrt(nu), n) + rng.normal(size=n) * np.sqrt(V)
        u_new = rng.normal(1.0, math.sqrt(nu))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            hits["dl"] += dersimonian_laird(Y, V, alpha)[1].contains(u_new)
            hits["hksj"] += reml_hksj(Y, V, alpha)[1].contains(u_new)
    tol = 3 * mc_error(1 - alpha, reps)
    ok_all = True
    for name, h in hits.items():
        cov = h / reps
        ok_all &= record(8, f"b[{name}]", abs(cov - (1 - alpha)) <= tol, f"n=200 coverage {cov:.4f}, nominal 0.9 +/- {tol:.4f}")
    assert ok_all


def test_c8_hksj_under_noise_recorded(clinical):
    cfg = SimConfig(n_train=50, n_test=50, n_splits=32, alpha=0.05, effect_noise=10.0, prior_error=0.2, methods=("cma", "hksj"))
    report = run_simulation(cfg, clinical)
    hk, cma = report.methods["hksj"].coverage, report.methods["cma"].coverage
    record(8, "c", True, f"recorded only: n=50, effect noise 10, coverage of u HKSJ {hk:.4f} vs CMA {cma:.4f}")


# ---------------------------------------------------------------------------
# 9, 10. qualitative simulation orderings
# ---------------------------------------------------------------------------


def test_c9_learning_beats_fixed_prior(clinical):
    ok_all = True
    for n in (16, 200):
        cfg = SimConfig(effect_noise=0.02, prior_error=0.02, n_train=n, n_test=64, n_splits=32, alpha=0.1, methods=("cma", "fixed-prior"))
        report = run_simulation(cfg, clinical)
        wins = np.mean([s["width:cma"] <= s["width:fixed-prior"] for s in report.splits])
        ok_all &= record(
            9, f"[n={n}]", wins >= 0.9,
            f"CMA narrower on {wins:.0%} of splits (mean widths {report.methods['cma'].mean_width:.2f} vs "
            f"{report.methods['fixed-prior'].mean_width:.2f})",
        )
    assert ok_all


def test_c10_clean_effect_ordering(clinical):
    alpha, delta = 0.25, 0.05
    # both methods target the same guaranteed confidence (1 - alpha)(1 - delta)
    alpha_cma = alpha_for_confidence((1 - alpha) * (1 - delta), 0.0)
    widths = {}
    for noise in (5e-8, 2.0):
        base = SimConfig(effect_noise=noise, prior_error=0.2, n_train=20, n_test=64, n_splits=32, alpha=alpha, delta=delta)
        clean = run_simulation(base.with_(methods=("cma-clean",)), clinical).methods["cma-clean"].mean_width
        cma = run_simulation(base.with_(alpha=alpha_cma, methods=("cma",)), clinical).methods["cma"].mean_width
        widths[noise] = (clean, cma)
    low_ok = widths[5e-8][0] <= widths[5e-8][1]
    high_ok = widths[2.0][0] > widths[2.0][1]
    record(10, "a", low_ok, f"effect noise 5e-8: clean {widths[5e-8][0]:.2f} <= effect {widths[5e-8][1]:.2f}")
    record(10, "b", high_ok, f"effect noise 2: clean {widths[2.0][0]:.2f} > effect {widths[2.0][1]:.2f}")
    assert low_ok and high_ok


# ---------------------------------------------------------------------------
# 11. performance
# ---------------------------------------------------------------------------


def test_c11_performance(clinical):
    rng = np.random.default_rng(11)
    X = rng.uniform(size=(500, 3))
    bundle = assemble_prior(0.0, KernelSpec("gaussian", 0.5), X, rng.uniform(size=3))
    Y = rng.normal(size=500)
    V = rng.exponential(size=500)
    start = time.perf_counter()
    predict_effect(precompute(bundle, Y, 0.1), V, 0.0)
    single = time.perf_counter() - start

    cfg = SimConfig(n_train=200, n_test=100, n_splits=5, alpha=0.1, methods=("cma",))
    start = time.perf_counter()
    report = run_simulation(cfg, clinical)
    rate = report.methods["cma"].n_evaluated / (time.perf_counter() - start)
    record(11, "a", single < 1.0, f"n=500 precompute plus predict_effect {single * 1e3:.0f} ms")
    record(11, "b", rate > 100, f"n=200 simulation streams {rate:.0f} predictions/s")
    assert single < 1.0 and rate > 100


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
