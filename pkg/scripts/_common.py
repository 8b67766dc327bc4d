"""Shared plumbing for the simulation scripts."""

from __future__ import annotations

import argparse
import warnings

import numpy as np

from conformeta.cli_io import emit
from conformeta.kernel_core import KernelSpec
from conformeta.sim_harness import CLINICAL_SCALE, Dataset, SimConfig, load_table, run_simulation, synthetic_dataset


def parser(description: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--data", help="delimiter-separated dataset (last column is the effect); default synthetic")
    p.add_argument("--rows", type=int, default=4000, help="synthetic dataset size")
    p.add_argument("--splits", type=int, default=32)
    p.add_argument("--n-test", type=int, default=64)
    p.add_argument("--kernel", default="gaussian")
    p.add_argument("--lengthscale", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the result table here (csv)")
    return p


def dataset(args) -> Dataset:
    if args.data:
        return load_table(args.data)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=args.seed, spawn_key=(2**31,)))
    return synthetic_dataset(args.rows, rng, location=CLINICAL_SCALE[0], scale=CLINICAL_SCALE[1])


def base_config(args, **kw) -> SimConfig:
    return SimConfig(
        n_splits=args.splits,
        n_test=args.n_test,
        kernel=KernelSpec.parse(args.kernel, args.lengthscale),
        seed=args.seed,
        **kw,
    )


def run(cfg: SimConfig, data: Dataset):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return run_simulation(cfg, data)


def finish(rows: list[dict], args) -> None:
    emit(rows, None, "csv")
    if args.out:
        emit(rows, args.out, "csv")
