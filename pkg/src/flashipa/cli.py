"""``fipa`` command line: invariance | equivalence | scaling | fit.

Exit codes: 0 all checks pass, 1 some check failed, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import bench
from .attention_kernel import TileSpec
from .model_io import BenchConfig, RunReport, emit_report, load_config, read_records_csv


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config (see flashipa.model_io.BenchConfig)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--precision", choices=("f32", "f64"))
    common.add_argument("--out", help="write the report here (default: stdout summary only)")
    common.add_argument("--format", choices=("csv", "json"), default="json")
    common.add_argument("--lengths", type=int, nargs="+")
    common.add_argument("--arms", nargs="+", choices=bench.ARMS)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--trials", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="fipa", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("invariance", parents=[common], help="SE(3) invariance under random rigid motions")
    sub.add_parser("equivalence", parents=[common], help="flash vs reference on identical inputs")
    sc = sub.add_parser("scaling", parents=[common], help="peak tracked memory and wall-clock vs L")
    sc.add_argument("--repeats", type=int, default=3)
    sc.add_argument("--memory-budget", type=int, default=bench.DEFAULT_MEMORY_BUDGET,
                    help="skip reference lengths whose quadratic buffers exceed this many bytes")
    ft = sub.add_parser("fit", parents=[common], help="fit a L^2 + b L to a scaling CSV")
    ft.add_argument("--input", required=True, help="CSV written by 'fipa scaling --format csv'")
    return p


def _run(args) -> RunReport:
    config = load_config(args.config) if args.config else BenchConfig()
    if args.command == "invariance":
        return bench.cmd_invariance(config, trials=args.trials or 100, precision=args.precision,
                                    seed=args.seed, length=(args.lengths or [64])[0],
                                    arms=tuple(args.arms or bench.ARMS))
    if args.command == "equivalence":
        return bench.cmd_equivalence(config, trials=args.trials or 3, seed=args.seed,
                                     lengths=tuple(args.lengths or (16, 64, 128)), precision=args.precision)
    if args.command == "scaling":
        spec = bench.SweepSpec(
            lengths=tuple(args.lengths or bench.DEFAULT_LENGTHS),
            arms=tuple(args.arms or bench.ARMS),
            seeds=(args.seed,),
            precision=args.precision or "f32",
            tiles=config.tiles,
            threads=args.threads,
            repeats=args.repeats,
            memory_budget=args.memory_budget,
        )
        return bench.cmd_scaling(spec, config)
    records = read_records_csv(args.input)
    report = RunReport("fit", config.to_dict(), records=records)
    report.fits = bench.fit_records(records)
    report.checks.extend(bench.scaling_checks(report.fits, records))
    return report


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        report = _run(args)
    except (ValueError, TypeError, OSError) as exc:
        print(f"fipa: error: {exc}", file=sys.stderr)
        return 2
    for c in report.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}  value={c.value:.3e}  tol={c.tolerance:.1e}")
    for note in report.notes:
        print(f"note: {note}")
    if args.out:
        emit_report(report, args.format, args.out)
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
