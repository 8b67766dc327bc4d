"""Clean-effect widening versus the shaved trial interval at a matched guarantee."""

from conformeta.sim_harness import alpha_for_confidence

from _common import base_config, dataset, finish, parser, run


def main():
    p = parser(__doc__)
    p.add_argument("--alpha", type=float, default=0.25)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--n-train", type=int, nargs="+", default=[20, 50])
    p.add_argument("--noise", type=float, nargs="+", default=[5e-8, 0.1, 2.0])
    args = p.parse_args()
    data = dataset(args)
    alpha_cma = alpha_for_confidence((1 - args.alpha) * (1 - args.delta), 0.0)
    rows = []
    for n in args.n_train:
        for noise in args.noise:
            cfg = base_config(args, n_train=n, prior_error=0.2, effect_noise=noise, alpha=args.alpha, delta=args.delta)
            clean = run(cfg.with_(methods=("cma-clean",)), data).methods["cma-clean"]
            shaved = run(cfg.with_(alpha=alpha_cma, methods=("cma",)), data).methods["cma"]
            for name, stats in (("cma-clean", clean), ("cma", shaved)):
                rows.append({"n_train": n, "effect_noise": noise, "method": name,
                             "mean_width": stats.mean_width, "coverage": stats.coverage})
    finish(rows, args)


if __name__ == "__main__":
    main()
