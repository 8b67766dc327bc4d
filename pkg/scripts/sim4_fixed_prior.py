"""Learning from trials versus calibrating the prior as a frozen predictor."""

import numpy as np

from _common import base_config, dataset, finish, parser, run


def main():
    p = parser(__doc__)
    p.add_argument("--prior-error", type=float, nargs="+", default=[0.02, 0.2, 0.9, 3.0])
    args = p.parse_args()
    data = dataset(args)
    rows = []
    for n in (16, 200):
        for prior_error in args.prior_error:
            cfg = base_config(args, n_train=n, prior_error=prior_error, effect_noise=0.02, alpha=0.1,
                              methods=("cma", "fixed-prior", "hksj"))
            report = run(cfg, data)
            wins = float(np.mean([s["width:cma"] <= s["width:fixed-prior"] for s in report.splits]))
            for name, stats in report.methods.items():
                rows.append({"n_train": n, "prior_error": prior_error, "method": name,
                             "mean_width": stats.mean_width, "coverage": stats.coverage,
                             "cma_narrower_share": wins})
    finish(rows, args)


if __name__ == "__main__":
    main()
