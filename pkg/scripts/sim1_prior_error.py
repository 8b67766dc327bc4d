"""Interval width versus prior quality: conformal versus classical baselines."""

from _common import base_config, dataset, finish, parser, run

METHODS = ("cma", "hksj", "dl")


def main():
    p = parser(__doc__)
    p.add_argument("--n-train", type=int, nargs="+", default=[16, 50, 200])
    args = p.parse_args()
    data = dataset(args)
    rows = []
    for prior_error in (3.0, 0.9, 0.2):
        for n in args.n_train:
            cfg = base_config(args, n_train=n, prior_error=prior_error, effect_noise=0.5, alpha=0.1, methods=METHODS)
            report = run(cfg, data)
            for name, stats in report.methods.items():
                rows.append({"prior_error": prior_error, "n_train": n, "method": name,
                             "mean_width": stats.mean_width, "coverage": stats.coverage})
    finish(rows, args)


if __name__ == "__main__":
    main()
