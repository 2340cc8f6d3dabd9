"""Error of the blocked kernel against exact attention, sweeping block size k and weight constant R.

Writes one CSV per sweep and prints per-point means. Defaults are desk scale;
raise --n and --trials to approach larger settings.
"""

import argparse
import logging
from pathlib import Path

from sparseattn.harness import ExperimentConfig, run_error_benchmark, summarize_benchmark
from sparseattn.io import write_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=4096)
    ap.add_argument("--d", type=int, default=64)
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--r-bits", type=int, default=8)
    ap.add_argument("--k-values", default="32,64,128,256,512")
    ap.add_argument("--r-values", default="0.1,0.2,0.4,0.8,1.6")
    ap.add_argument("--fixed-k", type=int, default=256, help="block size for the R sweep")
    ap.add_argument("--fixed-r", type=float, default=0.4, help="R for the k sweep")
    ap.add_argument("--outdir", default="results")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    sweeps = [
        ("k", [int(v) for v in args.k_values.split(",")],
         ExperimentConfig(n=args.n, d=args.d, trials=args.trials, seed=args.seed, r_bits=args.r_bits,
                          target_r=args.fixed_r, workers=args.workers)),
        ("r", [float(v) for v in args.r_values.split(",")],
         ExperimentConfig(n=args.n, d=args.d, k=args.fixed_k, trials=args.trials, seed=args.seed,
                          r_bits=args.r_bits, workers=args.workers)),
    ]
    for sweep, values, cfg in sweeps:
        rows = run_error_benchmark(cfg, sweep, values)
        path = out / f"sweep_{sweep}.csv"
        write_csv(path, rows)
        logging.info("%s -> %s", sweep, path)
        logging.info("%8s %12s %12s %12s %12s", sweep, "linf_alpha", "linf_base", "l2_alpha", "l2_base")
        for v, m in summarize_benchmark(rows).items():
            logging.info("%8s %12.5g %12.5g %12.5g %12.5g", v, m["linf_sparse"], m["linf_noalpha"],
                         m["l2_sparse"], m["l2_noalpha"])


if __name__ == "__main__":
    main()
