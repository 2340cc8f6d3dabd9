"""Command-line entry point: ``sparseattn {bound,validate,bench,moments,prioritize}``.

Exit codes: 0 success, 2 config/domain error, 3 I/O error, 4 acceptance-gate failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys

from .errors import ConfigError, DomainError, FormatError, ShapeMismatch
from .harness import (SWEEPS, ExperimentConfig, prioritize_layers, run_error_benchmark,
                      run_kq_moment_check, run_sparsity_validation, summarize_benchmark)
from .io import format_real, write_csv
from .theory import DEFAULT_DELTA, estimate_eps, p_sparse_lower_bound

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_GATE = 4

log = logging.getLogger("sparseattn")


def _emit(pairs) -> None:
    for key, value in pairs:
        if isinstance(value, bool):
            value = str(value).lower()
        elif isinstance(value, float):
            value = format_real(value)
        print(f"{key}={value}")


def cmd_bound(args) -> int:
    est = estimate_eps(args.n, args.k, args.r, args.delta)
    at_eps_b = (p_sparse_lower_bound(args.n, args.k, args.r, est.eps_b)
                if est.eps_b < 1 else math.nan)
    _emit([
        ("eps_b", est.eps_b), ("eps", est.eps), ("alpha", est.alpha),
        ("p_sparse_lower_bound", p_sparse_lower_bound(args.n, args.k, args.r, est.eps)),
        ("p_sparse_lower_bound_at_eps_b", at_eps_b),
    ])
    return EXIT_OK


def _config(args, **extra) -> ExperimentConfig:
    return ExperimentConfig(
        n=args.n, d=args.d, seed=args.seed, weight_std=args.weight_std,
        target_r=getattr(args, "target_r", None), gamma=args.gamma, beta=args.beta,
        workers=args.workers, **extra)


def cmd_validate(args) -> int:
    cfg = _config(args, k=args.k, trials=args.trials, delta=args.delta, output_path=args.out)
    report = run_sparsity_validation(cfg, eps_mode=args.eps_mode, eps=args.eps)
    fields = report.as_dict()
    _emit(fields.items())
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(fields.keys())
            w.writerow([format_real(v) if isinstance(v, float) else v for v in fields.values()])
    return EXIT_OK if report.passed else EXIT_GATE


def cmd_bench(args) -> int:
    try:
        values = [float(v) if args.sweep == "r" else int(v) for v in args.values.split(",")]
    except ValueError:
        raise ConfigError(f"cannot parse --values {args.values!r}") from None
    cfg = _config(args, k=args.k, trials=args.trials, r_bits=args.r_bits, delta=args.delta,
                  output_path=args.out)
    rows = run_error_benchmark(cfg, args.sweep, values, timing=not args.no_timing)
    write_csv(args.out, rows)
    for v, m in summarize_benchmark(rows).items():
        log.info("sweep=%s linf_sparse=%.6g linf_noalpha=%.6g l2_sparse=%.6g l2_noalpha=%.6g",
                 v, m["linf_sparse"], m["linf_noalpha"], m["l2_sparse"], m["l2_noalpha"])
    print(f"rows={len(rows)}")
    print(f"out={args.out}")
    return EXIT_OK


def cmd_moments(args) -> int:
    cfg = _config(args)
    rep = run_kq_moment_check(cfg, samples=args.samples)
    _emit([("samples", rep.samples), ("mean", rep.mean), ("b", rep.b), ("mean_tol", rep.mean_tol),
           ("var", rep.var), ("R", rep.R), ("mean_ok", rep.mean_ok), ("var_ok", rep.var_ok),
           ("passed", rep.passed)])
    return EXIT_OK if rep.passed else EXIT_GATE


def cmd_prioritize(args) -> int:
    ranking = prioritize_layers(args.layers, args.n, args.k)
    for rank, e in enumerate(ranking.entries):
        print(f"rank={rank} layer_id={e.layer_id} R={format_real(e.R)} eps_b={format_real(e.eps_b)}")
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--weight-std", type=float, default=0.05)
    p.add_argument("--gamma", default="ones", help="ones, zeros, a constant, or a matrix file")
    p.add_argument("--beta", default="zeros", help="ones, zeros, a constant, or a matrix file")
    p.add_argument("--workers", type=int, default=1, help="threads used to run trials")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparseattn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bound", help="closed-form eps_b, eps, alpha and the P_sparse lower bound")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("validate", help="Monte Carlo check of the sparsity probability")
    _add_common(p)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--target-R", "--target-r", dest="target_r", type=float, default=None)
    p.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    p.add_argument("--eps-mode", choices=("theorem", "estimate"), default="theorem")
    p.add_argument("--eps", type=float, default=None, help="test at this eps instead")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("bench", help="error/time benchmark of the blocked kernel")
    _add_common(p)
    p.add_argument("--sweep", choices=SWEEPS, required=True)
    p.add_argument("--values", required=True)
    p.add_argument("--k", type=int, default=256, help="block size when not sweeping k")
    p.add_argument("--target-R", "--target-r", dest="target_r", type=float, default=0.4,
                   help="R when not sweeping r")
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--r-bits", type=int, required=True)
    p.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    p.add_argument("--no-timing", action="store_true",
                   help="write zero time columns so the CSV is byte-reproducible")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("moments", help="empirical logit moments vs (b, R)")
    _add_common(p)
    p.add_argument("--samples", type=int, required=True)
    p.set_defaults(func=cmd_moments)

    p = sub.add_parser("prioritize", help="rank layers by weight constant R")
    p.add_argument("--layers", required=True, help="JSON manifest of layer weight files")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.set_defaults(func=cmd_prioritize)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (OSError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, DomainError, ShapeMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
