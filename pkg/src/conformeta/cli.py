"""Command-line entry point.

Every tunable can come from a flag or from an INI config file (``--config``,
keys in a ``[conformeta]`` section or at top level); flags win.
"""

from __future__ import annotations

import argparse
import configparser
import datetime as _dt
import sys

import numpy as np

from . import baselines, cli_io, meta_predict
from .errors import ConformetaError, InvalidInputError
from .kernel_core import KernelSpec, TrainingFactor, assemble_prior, gram_matrix, precompute
from .sim_harness import CLINICAL_SCALE, SimConfig, load_table, run_simulation, synthetic_dataset

DEFAULTS = {
    "alpha": 0.1,
    "eta": 0.0,
    "delta": 0.05,
    "kernel": "gaussian",
    "lengthscale": 1.0,
    "lambda": None,
    "prior_mean": 0.0,
    "format": "json",
    "method": "hksj",
    "seed": 0,
}


def _read_config(path) -> dict:
    if path is None:
        return {}
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc}") from exc
    if not text.lstrip().startswith("["):
        text = "[conformeta]\n" + text
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise InvalidInputError(f"{path}: {exc}") from exc
    out = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            out[key.replace("-", "_")] = value
    return out


def _setting(args, cfg: dict, name: str, cast=float):
    val = getattr(args, name, None)
    if val is None:
        val = cfg.get(name, DEFAULTS.get(name))
    if val is None:
        return None
    try:
        return cast(val)
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"bad value for {name}: {val!r}") from exc


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI file with default settings")
    p.add_argument("--alpha", type=float)
    p.add_argument("--out", help="output path (default stdout)")
    p.add_argument("--format", choices=["json", "csv"])
    p.add_argument("--no-timestamp", action="store_true", help="omit the generated_at field")


def _add_prior(p: argparse.ArgumentParser) -> None:
    p.add_argument("--train", required=True, help="training trial table")
    p.add_argument("--test", required=True, help="test table (features, optional v and m)")
    p.add_argument("--kernel", help="gaussian | laplace | gram:PATH")
    p.add_argument("--lengthscale", type=float)
    p.add_argument("--lambda", dest="lambda", type=float, help="ridge override (>= max Gram diagonal)")
    p.add_argument("--prior-mean", dest="prior_mean", type=float, help="constant prior mean when no m column")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conformeta", description="Conformal meta-analysis")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_ in [
        ("predict-effect", "interval for the true effect (noise-corrected trial interval at v=0)"),
        ("predict-trial", "interval for a new trial's observed effect"),
        ("predict-clean-effect", "interval for the true effect with large trials"),
    ]:
        p = sub.add_parser(name, help=help_)
        _add_common(p)
        _add_prior(p)
        if name != "predict-clean-effect":
            p.add_argument("--eta", type=float)
        else:
            p.add_argument("--delta", type=float)

    p = sub.add_parser("baseline", help="classical random-effects prediction interval")
    _add_common(p)
    p.add_argument("--train", required=True)
    p.add_argument("--method", choices=["dl", "hksj", "bayes"])
    p.add_argument("--v-new", dest="v_new", type=float, default=0.0, help="new trial variance (bayes)")

    p = sub.add_parser("simulate", help="coverage/width simulation")
    _add_common(p)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data", help="delimiter-separated dataset, last column is the effect")
    src.add_argument("--synthetic", type=int, help="rows of built-in synthetic data")
    p.add_argument("--location", type=float, default=CLINICAL_SCALE[0], help="synthetic effect location")
    p.add_argument("--scale", type=float, default=CLINICAL_SCALE[1], help="synthetic effect scale")
    p.add_argument("--kernel")
    p.add_argument("--lengthscale", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--splits", dest="n_splits", type=int)
    p.add_argument("--n-train", dest="n_train", type=int)
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--effect-noise", dest="effect_noise", type=float)
    p.add_argument("--prior-error", dest="prior_error", type=float)
    p.add_argument("--method", dest="methods", action="append", help="repeatable; default cma and hksj")
    p.add_argument("--points-out", help="write per-point rows here")

    p = sub.add_parser("convert", help="two-arm summaries to a trial table")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    return parser


def _stamp(records: list[dict], args) -> list[dict]:
    if args.no_timestamp:
        return records
    now = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return [{**rec, "generated_at": now} for rec in records]


def _predict(args, cfg: dict) -> list[dict]:
    alpha = _setting(args, cfg, "alpha")
    kernel = KernelSpec.parse(_setting(args, cfg, "kernel", str), _setting(args, cfg, "lengthscale"))
    lam = _setting(args, cfg, "lambda")
    train = cli_io.load_trials(args.train, require=("y", "v"))
    test_cols = ("v",) if args.command == "predict-trial" else ()
    test = cli_io.load_trials(args.test, require=test_cols)
    if (train.m is None) != (test.m is None):
        raise InvalidInputError("prior mean column 'm' must be present in both or neither table")
    const = _setting(args, cfg, "prior_mean")
    M = train.m if train.m is not None else np.full(len(train), const)
    m_test = test.m if test.m is not None else np.full(len(test), const)
    Y, V = train.y, train.v

    if kernel.kind == "precomputed":
        if len(test) != 1:
            raise InvalidInputError("a Gram file describes exactly one test point")
        bundle = assemble_prior(np.append(M, m_test[0]), kernel, np.zeros((len(train), 1)), np.zeros(1))
        pres = [precompute(bundle, Y, alpha, lam)]
    else:
        if test.feature_names != train.feature_names:
            raise InvalidInputError("training and test tables must share feature columns")
        K = gram_matrix(kernel, train.X, train.X)
        k_mat = gram_matrix(kernel, train.X, test.X)
        k0 = np.array([gram_matrix(kernel, r[None, :], r[None, :])[0, 0] for r in test.X])
        factor = TrainingFactor(K, M, Y)
        pres = list(factor.iter_precompute(m_test, k_mat, k0, alpha, lam))

    records = []
    for j, pre in enumerate(pres):
        if args.command == "predict-effect":
            iv = meta_predict.predict_effect(pre, V, _setting(args, cfg, "eta"))
        elif args.command == "predict-trial":
            iv = meta_predict.predict_trial(pre, V, float(test.v[j]), _setting(args, cfg, "eta"))
        else:
            iv = meta_predict.predict_clean_effect(pre, V, _setting(args, cfg, "delta"))
        records.append(cli_io.interval_record(iv, test_index=j))
    return records


def _baseline(args, cfg: dict) -> list[dict]:
    alpha = _setting(args, cfg, "alpha")
    method = _setting(args, cfg, "method", str)
    train = cli_io.load_trials(args.train, require=("y", "v"))
    if method == "dl":
        fit, iv = baselines.dersimonian_laird(train.y, train.v, alpha)
    elif method == "hksj":
        fit, iv = baselines.reml_hksj(train.y, train.v, alpha)
    elif method == "bayes":
        fit = baselines.reml_hksj(train.y, train.v, alpha)[0]
        iv = baselines.bayesian_trial(train.y, train.v, args.v_new, alpha, fit.nu_hat)
    else:
        raise InvalidInputError(f"unknown baseline {method!r}")
    return [cli_io.interval_record(iv, nu_hat=fit.nu_hat, ate_hat=fit.ate_hat, converged=fit.converged)]


def _simulate(args, cfg: dict) -> tuple[list[dict], list[dict]]:
    values = {k: v for k, v in cfg.items() if k in SimConfig.__dataclass_fields__ or k in ("kernel", "lengthscale")}
    for name in ("alpha", "eta", "delta", "seed", "n_splits", "n_train", "n_test", "effect_noise", "prior_error", "kernel", "lengthscale"):
        val = getattr(args, name, None)
        if val is not None:
            values[name] = val
    if args.methods:
        values["methods"] = tuple(args.methods)
    sim = SimConfig.from_mapping(values)
    data_path = args.data or cfg.get("data")
    if data_path:
        data = load_table(data_path)
    else:
        rows = args.synthetic or int(cfg.get("synthetic", 2000))
        rng = np.random.default_rng(np.random.SeedSequence(entropy=sim.seed, spawn_key=(2**31,)))
        data = synthetic_dataset(rows, rng, location=args.location, scale=args.scale)
    report = run_simulation(sim, data)
    return report.summary_records(), report.rows


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "convert":
            cli_io.write_trials(args.out, cli_io.convert_two_arm(args.inp))
            return 0
        cfg = _read_config(args.config)
        fmt = _setting(args, cfg, "format", str)
        if args.command.startswith("predict"):
            records = _predict(args, cfg)
        elif args.command == "baseline":
            records = _baseline(args, cfg)
        else:
            records, points = _simulate(args, cfg)
            if args.points_out:
                cli_io.emit(points, args.points_out, fmt)
        cli_io.emit(_stamp(records, args), args.out, fmt)
        return 0
    except ConformetaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return InvalidInputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
