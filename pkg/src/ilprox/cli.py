"""Command-line experiment runner.

Subcommands: ``train`` (one config), ``sweep`` (learning-rate stability
grid), ``verify`` (synthetic verification suites), ``plotdata`` (CSV
aggregation).  Exit codes: 0 success, 1 check failure, 2 config or data
error.
"""

from __future__ import annotations

import argparse
import sys

from .checks import SUITES, run_suite
from .datasets import DataFormatError
from .experiments import ConfigError, emit_plot_data, load_config, run_experiment, stability_sweep

EXIT_OK = 0
EXIT_CHECK_FAILURE = 1
EXIT_CONFIG_ERROR = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ilprox",
        description="Energy-based and proximal MLP training experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training experiment")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None,
                         help="override the config's seed list with one seed")
    p_train.add_argument("--out-dir", default="results")
    p_train.add_argument("--threads", type=int, default=1)

    p_sweep = sub.add_parser("sweep", help="stability sweep over learning rates")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--out-dir", default="results")
    p_sweep.add_argument("--threads", type=int, default=1)

    p_verify = sub.add_parser("verify", help="run a verification suite")
    p_verify.add_argument("suite", choices=sorted(SUITES))

    p_plot = sub.add_parser("plotdata", help="aggregate CSVs for plotting")
    p_plot.add_argument("--in", dest="inputs", required=True,
                        help="comma-separated input CSV paths")
    p_plot.add_argument("--kind", choices=["aggregate", "downsample"],
                        default="aggregate")
    p_plot.add_argument("--out", required=True)
    p_plot.add_argument("--stride", type=int, default=1)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            cfg = load_config(args.config)
            if args.seed is not None:
                cfg.seeds = [args.seed]
            summary = run_experiment(cfg, args.out_dir, threads=args.threads)
            print(f"{summary['name']} {summary['algo']} lr={summary['lr']:g}: "
                  f"best test accuracy {summary['best_test_accuracy']:.4f}, "
                  f"final {summary['final_test_accuracy_mean']:.4f}"
                  f" (+-{summary['final_test_accuracy_std']:.4f})")
            return EXIT_OK
        if args.command == "sweep":
            cfg = load_config(args.config)
            results = stability_sweep(cfg, args.out_dir, threads=args.threads)
            for r in results:
                mark = "divergent" if r["divergent"] else ""
                print(f"{r['algo']:>14} lr={r['lr']:<8g} "
                      f"final={r['final_accuracy_mean']:.4f} "
                      f"(+-{r['final_accuracy_std']:.4f}) {mark}")
            return EXIT_OK
        if args.command == "verify":
            results = run_suite(args.suite)
            for r in results:
                print(r.line())
            return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK_FAILURE
        if args.command == "plotdata":
            paths = [p.strip() for p in args.inputs.split(",") if p.strip()]
            emit_plot_data(paths if len(paths) > 1 else paths[0],
                           args.kind, args.out, stride=args.stride)
            return EXIT_OK
    except (ConfigError, DataFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
