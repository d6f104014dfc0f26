"""Count traces that violate the smooth-descent gradient bounds.

Sweeps step sizes over random compression problems and reports, for each
gradient reading and each choice of optimum (zero or best-found loss), how
many traces break either bound.
"""
import argparse

import numpy as np

from lrtt.rgd import RgdConfig, check_theorem1_bounds, rgd_compress
from lrtt.tt import random_tt

READINGS = ("riemannian", "step", "euclidean")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--problems", type=int, default=100)
    parser.add_argument("--steps", type=int, default=20)
    parser.add_argument("--etas", type=float, nargs="+", default=[0.1, 0.5, 1.0, 1.5])
    parser.add_argument("--shape", type=int, nargs="+", default=[4, 5, 4])
    parser.add_argument("--ref-rank", type=int, default=4)
    parser.add_argument("--target-rank", type=int, default=2)
    args = parser.parse_args()

    k = len(args.shape)
    ref_ranks = (1, *[args.ref_rank] * (k - 1), 1)
    target = (1, *[args.target_rank] * (k - 1), 1)
    print(f"{'eta':>5} " + " ".join(f"{r + '/' + s:>16}" for r in READINGS for s in ("0", "best")))
    for eta in args.etas:
        counts = dict.fromkeys(((r, s) for r in READINGS for s in ("0", "best")), 0)
        for seed in range(args.problems):
            w_ref = random_tt(args.shape, ref_ranks, np.random.default_rng(seed))
            _, trace = rgd_compress(w_ref, RgdConfig(target, eta, args.steps, 1.0, stop_tol=0.0))
            for reading in READINGS:
                for star, value in (("0", 0.0), ("best", trace.best_loss)):
                    rep = check_theorem1_bounds(trace, 1.0, eta, value, gradient=reading)
                    counts[reading, star] += not rep.all_ok
        print(f"{eta:>5} " + " ".join(f"{counts[key]:>16}" for key in counts))


if __name__ == "__main__":
    main()
