"""Observed sparsity frequency vs the closed-form lower bound over a grid of R."""

import argparse
import logging

from sparseattn.harness import ExperimentConfig, run_sparsity_validation


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=1024)
    ap.add_argument("--d", type=int, default=64)
    ap.add_argument("--k", type=int, default=32)
    ap.add_argument("--trials", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--r-values", default="0.1,0.4,1,4,16")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    logging.info("%6s %10s %10s %10s %10s", "R", "eps_b", "observed", "bound", "wilson_lo")
    for r in (float(v) for v in args.r_values.split(",")):
        cfg = ExperimentConfig(n=args.n, d=args.d, k=args.k, trials=args.trials, seed=args.seed, target_r=r)
        rep = run_sparsity_validation(cfg)
        logging.info("%6g %10.4g %10.4f %10.4f %10.4f", r, rep.eps_b, rep.observed_p,
                     rep.theoretical_bound, rep.wilson_lo)


if __name__ == "__main__":
    main()
