"""Synthetic meta-analysis experiments measuring coverage and width.

A dataset supplies features ``X`` and true effects ``U``. Each split draws
training, test and held-out rows, then synthesizes within-trial variances
(``effect_noise``), an imperfect prior mean (``prior_error``) and observed
effects, and runs every configured method on every test point.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from typing import NamedTuple

import numpy as np
import pandas as pd

from . import baselines, meta_predict, statfns
from .conformal_krr import PredictionInterval, predict_noise_free
from .errors import InvalidInputError, NumericalFailure
from .kernel_core import KernelSpec, TrainingFactor, conformal_rank, gram_matrix

METHODS = ("cma", "cma-trial", "cma-clean", "dl", "hksj", "bayes", "fixed-prior", "krr")
TRIAL_METHODS = frozenset({"cma-trial", "bayes"})

# (location, scale) for synthetic effects on a clinical-outcome scale
CLINICAL_SCALE = (500.0, 200.0)


@dataclass(frozen=True)
class SimConfig:
    effect_noise: float = 0.5
    prior_error: float = 0.2
    n_train: int = 50
    n_test: int = 64
    n_splits: int = 32
    n_heldout: int = 16
    alpha: float = 0.1
    eta: float = 0.0
    trial_eta: float = 1.0
    delta: float = 0.05
    kernel: KernelSpec = field(default_factory=lambda: KernelSpec("gaussian", 0.5))
    methods: tuple[str, ...] = ("cma", "hksj")
    seed: int = 0

    def __post_init__(self):
        if self.n_splits < 1 or self.n_test < 1 or self.n_train < 1:
            raise InvalidInputError("n_splits, n_test and n_train must be >= 1")
        if self.n_heldout < 1:
            raise InvalidInputError("n_heldout must be >= 1")
        if self.effect_noise < 0 or self.prior_error < 0:
            raise InvalidInputError("effect_noise and prior_error must be >= 0")
        if not (0.0 < self.alpha < 1.0):
            raise InvalidInputError("alpha must lie in (0, 1)")
        if self.kernel.kind == "precomputed":
            raise InvalidInputError("simulations need a feature kernel (gaussian or laplace)")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise InvalidInputError(f"unknown methods: {sorted(unknown)}")
        object.__setattr__(self, "methods", tuple(self.methods))

    def with_(self, **kw) -> "SimConfig":
        return replace(self, **kw)

    @classmethod
    def from_mapping(cls, values: dict) -> "SimConfig":
        """Build from string-or-typed key/values (config files, CLI)."""
        kw: dict = {}
        names = {f.name: f for f in fields(cls)}
        kernel_kind = values.get("kernel", "gaussian")
        lengthscale = float(values.get("lengthscale", 0.5))
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key in ("kernel", "lengthscale"):
                continue
            if key not in names:
                raise InvalidInputError(f"unknown simulation setting {key!r}")
            if key == "methods":
                kw[key] = tuple(raw.replace(",", " ").split()) if isinstance(raw, str) else tuple(raw)
            elif key in ("n_train", "n_test", "n_splits", "n_heldout", "seed"):
                kw[key] = int(raw)
            else:
                kw[key] = float(raw)
        kw["kernel"] = kernel_kind if isinstance(kernel_kind, KernelSpec) else KernelSpec.parse(kernel_kind, lengthscale)
        return cls(**kw)


class Dataset(NamedTuple):
    X: np.ndarray
    U: np.ndarray


@dataclass
class MethodStats:
    coverage: float
    mean_width: float
    width_std: float
    n_evaluated: int
    infinite_fraction: float


@dataclass
class CoverageReport:
    config: SimConfig
    methods: dict[str, MethodStats]
    rows: list[dict]
    splits: list[dict]

    def summary_records(self) -> list[dict]:
        return [{"method": name, **asdict(stats)} for name, stats in sorted(self.methods.items())]


def mc_error(p: float, n: int) -> float:
    """Binomial standard error of an empirical coverage at level ``p``."""
    return math.sqrt(p * (1.0 - p) / n)


def split_rng(seed: int, split: int) -> np.random.Generator:
    """Independent generator for one split, derived from the root seed."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(split,)))


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def gen_variances(U, effect_noise: float, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Within-trial variances with ``(E V)^2 / E|U| = effect_noise``.

    ``E|U|`` is the sample mean of ``|U|``; ``size`` defaults to ``len(U)``.
    """
    U = np.asarray(U, dtype=float)
    size = U.size if size is None else size
    scale = math.sqrt(effect_noise * float(np.mean(np.abs(U))))
    return rng.exponential(1.0, size=size) * scale


def gen_prior_mean(
    U,
    X,
    prior_error: float,
    kernel: KernelSpec,
    rng: np.random.Generator,
    X_heldout,
    max_attempts: int = 10,
) -> tuple[np.ndarray, float]:
    """Prior means with ``MSE(M, U) = prior_error * Var(U)``.

    The error is a random RKHS function centred on held-out features, so a
    kernel fit on the training points can partly explain it. Returns the
    means and the mixing weight ``p`` (which may exceed 1).
    """
    U = np.asarray(U, dtype=float)
    if prior_error == 0:
        return U.copy(), 0.0
    cross = gram_matrix(kernel, X, X_heldout)
    var_u = float(np.var(U))
    for _ in range(max_attempts):
        g = rng.standard_normal(cross.shape[1])
        F = cross @ g
        mse = float(np.mean((U - F) ** 2))
        if mse > 0:
            p = math.sqrt(prior_error * var_u / mse)
            return p * F + (1.0 - p) * U, p
    raise NumericalFailure("offset function coincides with U; cannot scale prior error")


def sample_observed(U, V, rng: np.random.Generator) -> np.ndarray:
    U = np.asarray(U, dtype=float)
    V = np.asarray(V, dtype=float)
    return U + np.sqrt(V) * rng.standard_normal(U.size)


def synthetic_dataset(
    n_rows: int,
    rng: np.random.Generator,
    dim: int = 3,
    n_centers: int = 20,
    lengthscale: float = 0.4,
    noise_sd: float = 0.25,
    location: float = 1.0,
    scale: float = 1.0,
) -> Dataset:
    """Smooth random effect surface over uniform features plus idiosyncratic noise.

    ``U = location + scale * (f(X) + noise)``. The effect-noise dial is not
    scale-free (``V`` grows like the square root of ``E|U|``), so ``location``
    and ``scale`` decide how noisy trials are relative to the effect spread;
    :data:`CLINICAL_SCALE` mimics a survival-time style outcome.
    """
    X = rng.uniform(0.0, 1.0, size=(n_rows, dim))
    centers = rng.uniform(0.0, 1.0, size=(n_centers, dim))
    coef = rng.standard_normal(n_centers)
    f = gram_matrix(KernelSpec("gaussian", lengthscale), X, centers) @ coef
    U = location + scale * (f + noise_sd * rng.standard_normal(n_rows))
    return Dataset(X, U)


def load_table(path, delimiter: str | None = None) -> Dataset:
    """Load a delimiter-separated table; the last column is the target."""
    try:
        frame = pd.read_csv(path, sep=delimiter, engine="python")
    except (OSError, ValueError) as exc:
        raise InvalidInputError(f"cannot read dataset {path}: {exc}") from exc
    try:
        values = frame.to_numpy(dtype=float)
    except ValueError as exc:
        raise InvalidInputError(f"{path}: non-numeric values ({exc})") from exc
    if values.shape[1] < 2:
        raise InvalidInputError(f"{path}: need at least one feature column and a target")
    bad = ~np.all(np.isfinite(values), axis=1)
    if bad.any():
        raise InvalidInputError(f"{path}: non-finite values on data row(s) {list(np.flatnonzero(bad)[:5] + 2)}")
    return Dataset(values[:, :-1], values[:, -1])


# ---------------------------------------------------------------------------
# Methods
# ---------------------------------------------------------------------------


def alpha_for_confidence(target: float, eta: float) -> float:
    """Nominal alpha whose effect-coverage bound equals ``target`` at ``eta``."""
    ratio = (1.0 - target) * statfns.erfc(math.sqrt(eta / 2.0))
    return ratio / (1.0 + ratio)


def fixed_prior_interval(Y, M, m: float, alpha: float) -> PredictionInterval:
    """Split-style interval treating the prior mean as a frozen predictor."""
    resid = np.sort(np.abs(np.asarray(Y) - np.asarray(M)), kind="stable")
    n = resid.size
    tau = conformal_rank(alpha, n)
    if tau > n:
        return PredictionInterval(-np.inf, np.inf, "fixed-prior", alpha, 1.0 - alpha, n, tau=tau)
    q = float(resid[tau - 1])
    return PredictionInterval(m - q, m + q, "fixed-prior", alpha, 1.0 - alpha, n, tau=tau)


def _run_split(cfg: SimConfig, data: Dataset, split: int) -> tuple[list[dict], dict]:
    rng = split_rng(cfg.seed, split)
    N = data.U.size
    need = cfg.n_train + cfg.n_test + cfg.n_heldout
    idx = rng.permutation(N)[:need]
    tr = idx[: cfg.n_train]
    te = idx[cfg.n_train : cfg.n_train + cfg.n_test]
    ho = idx[cfg.n_train + cfg.n_test :]
    pool = np.concatenate([tr, te])
    X_pool, U_pool = data.X[pool], data.U[pool]

    V_pool = gen_variances(U_pool, cfg.effect_noise, rng)
    M_pool, p = gen_prior_mean(U_pool, X_pool, cfg.prior_error, cfg.kernel, rng, data.X[ho])
    Y_pool = sample_observed(U_pool, V_pool, rng)

    n = cfg.n_train
    X, U, V, M, Y = X_pool[:n], U_pool[:n], V_pool[:n], M_pool[:n], Y_pool[:n]
    x, u, v, m, y = X_pool[n:], U_pool[n:], V_pool[n:], M_pool[n:], Y_pool[n:]

    K = gram_matrix(cfg.kernel, X, X)
    k_mat = gram_matrix(cfg.kernel, X, x)
    k0 = np.array([gram_matrix(cfg.kernel, row[None, :], row[None, :])[0, 0] for row in x])

    methods = cfg.methods
    intervals: dict[str, list[PredictionInterval]] = {name: [] for name in methods}
    conformal = [mm for mm in methods if mm in ("cma", "cma-trial", "cma-clean", "krr")]
    if conformal:
        factor_y = TrainingFactor(K, M, Y)
        factor_u = TrainingFactor(K, M, U) if "krr" in methods else None
        for j in range(cfg.n_test):
            pre = factor_y.precompute(m[j], k_mat[:, j], k0[j], cfg.alpha)
            if "cma" in methods:
                intervals["cma"].append(meta_predict.predict_effect(pre, V, cfg.eta))
            if "cma-trial" in methods:
                intervals["cma-trial"].append(meta_predict.predict_trial(pre, V, v[j], cfg.trial_eta))
            if "cma-clean" in methods:
                intervals["cma-clean"].append(meta_predict.predict_clean_effect(pre, V, cfg.delta))
            if factor_u is not None:
                pre_u = factor_u.precompute(m[j], k_mat[:, j], k0[j], cfg.alpha)
                intervals["krr"].append(predict_noise_free(pre_u, "krr"))

    baseline_ok = bool(np.all(V > 0))
    if not baseline_ok and any(mm in methods for mm in ("dl", "hksj", "bayes")):
        warnings.warn("zero within-trial variances: classical baselines skipped", stacklevel=3)
    if baseline_ok:
        if "dl" in methods:
            intervals["dl"] = [baselines.dersimonian_laird(Y, V, cfg.alpha)[1]] * cfg.n_test
        if "hksj" in methods or "bayes" in methods:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                fit, hk = baselines.reml_hksj(Y, V, cfg.alpha)
            if "hksj" in methods:
                intervals["hksj"] = [hk] * cfg.n_test
            if "bayes" in methods:
                intervals["bayes"] = [
                    baselines.bayesian_trial(Y, V, v[j], cfg.alpha, nu_plugin=fit.nu_hat) for j in range(cfg.n_test)
                ]
    if "fixed-prior" in methods:
        intervals["fixed-prior"] = [fixed_prior_interval(Y, M, m[j], cfg.alpha) for j in range(cfg.n_test)]

    rows = []
    summary: dict = {"split": split, "p": p}
    for name in methods:
        target = y if name in TRIAL_METHODS else u
        widths = []
        for j, iv in enumerate(intervals[name]):
            rows.append(
                {
                    "method": name,
                    "split": split,
                    "test_index": j,
                    "lower": iv.lower,
                    "upper": iv.upper,
                    "width": iv.width,
                    "covered": iv.contains(float(target[j])),
                }
            )
            if iv.is_finite:
                widths.append(iv.width)
        summary[f"width:{name}"] = float(np.mean(widths)) if widths else math.inf
    return rows, summary


def summarize(rows: list[dict], methods) -> dict[str, MethodStats]:
    out = {}
    for name in methods:
        sel = [r for r in rows if r["method"] == name]
        if not sel:
            out[name] = MethodStats(math.nan, math.nan, math.nan, 0, math.nan)
            continue
        covered = np.array([r["covered"] for r in sel], dtype=float)
        widths = np.array([r["width"] for r in sel])
        finite = np.isfinite(widths)
        out[name] = MethodStats(
            coverage=float(covered.mean()),
            mean_width=float(widths[finite].mean()) if finite.any() else math.inf,
            width_std=float(widths[finite].std()) if finite.any() else math.nan,
            n_evaluated=len(sel),
            infinite_fraction=float(1.0 - finite.mean()),
        )
    return out


def run_simulation(cfg: SimConfig, data: Dataset) -> CoverageReport:
    """Run every split of ``cfg`` on ``data`` and aggregate coverage/width."""
    need = cfg.n_train + cfg.n_test + cfg.n_heldout
    if data.U.size < need:
        raise InvalidInputError(f"dataset has {data.U.size} rows, each split needs {need}")
    rows: list[dict] = []
    splits = []
    for split in range(cfg.n_splits):
        split_rows, summary = _run_split(cfg, data, split)
        rows.extend(split_rows)
        splits.append(summary)
    rows.sort(key=lambda r: (r["method"], r["split"], r["test_index"]))
    return CoverageReport(config=cfg, methods=summarize(rows, cfg.methods), rows=rows, splits=splits)
