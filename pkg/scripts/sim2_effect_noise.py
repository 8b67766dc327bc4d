"""Coverage at a 95% target as within-trial noise grows."""

from _common import base_config, dataset, finish, parser, run


def main():
    p = parser(__doc__)
    p.add_argument("--noise", type=float, nargs="+", default=[0.0, 0.5, 2.0, 5.0, 10.0])
    args = p.parse_args()
    data = dataset(args)
    rows = []
    for n in (50, 200):
        for noise in args.noise:
            cfg = base_config(args, n_train=n, prior_error=0.2, effect_noise=noise, alpha=0.05,
                              methods=("cma-trial", "hksj", "bayes"))
            report = run(cfg, data)
            for name, stats in report.methods.items():
                rows.append({"n_train": n, "effect_noise": noise, "method": name,
                             "coverage": stats.coverage, "mean_width": stats.mean_width})
    finish(rows, args)


if __name__ == "__main__":
    main()
