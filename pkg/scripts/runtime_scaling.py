"""Wall time of exact vs blocked attention as n doubles at fixed k and d."""

import argparse
import logging

from sparseattn.harness import ExperimentConfig, run_error_benchmark, summarize_benchmark
from sparseattn.io import write_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-values", default="2048,4096,8192,16384")
    ap.add_argument("--d", type=int, default=64)
    ap.add_argument("--k", type=int, default=128)
    ap.add_argument("--trials", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runtime_scaling.csv")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    ns = [int(v) for v in args.n_values.split(",")]
    cfg = ExperimentConfig(n=ns[0], d=args.d, k=args.k, trials=args.trials, seed=args.seed, target_r=0.4)
    rows = run_error_benchmark(cfg, "n", ns)
    write_csv(args.out, rows)
    summary = summarize_benchmark(rows)
    prev = None
    logging.info("%7s %14s %14s %8s %8s", "n", "exact_us", "sparse_us", "x_exact", "x_sparse")
    for n in ns:
        m = summary[n]
        ratios = ("", "") if prev is None else (f"{m['time_exact_us'] / prev['time_exact_us']:.2f}",
                                                f"{m['time_sparse_us'] / prev['time_sparse_us']:.2f}")
        logging.info("%7d %14.0f %14.0f %8s %8s", n, m["time_exact_us"], m["time_sparse_us"], *ratios)
        prev = m


if __name__ == "__main__":
    main()
