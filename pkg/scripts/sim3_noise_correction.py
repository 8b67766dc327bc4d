"""Effect intervals with and without noise correction at a matched 90% guarantee."""

from conformeta.sim_harness import alpha_for_confidence

from _common import base_config, dataset, finish, parser, run

TARGET = 0.9


def main():
    p = parser(__doc__)
    p.add_argument("--eta", type=float, default=0.4015, help="the corrected run's eta")
    p.add_argument("--noise", type=float, nargs="+", default=[0.1, 0.5, 2.0, 10.0])
    args = p.parse_args()
    data = dataset(args)
    rows = []
    for n in (50, 200):
        for noise in args.noise:
            for eta in (0.0, args.eta):
                alpha = alpha_for_confidence(TARGET, eta)
                cfg = base_config(args, n_train=n, prior_error=0.1, effect_noise=noise, alpha=alpha, eta=eta, methods=("cma",))
                stats = run(cfg, data).methods["cma"]
                rows.append({"n_train": n, "effect_noise": noise, "eta": eta, "alpha": alpha,
                             "coverage": stats.coverage, "mean_width": stats.mean_width})
    finish(rows, args)


if __name__ == "__main__":
    main()
