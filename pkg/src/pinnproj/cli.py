"""Command line entry point: ``pinnproj gen|train|bench|report``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .datagen import generate, read_dataset, write_dataset
from .harness import (DESK_MAX_ITERATIONS, ExperimentConfig, aggregate, read_trials_csv,
                      run_experiment, run_trial, write_reports)
from .model import write_checkpoint
from .optim import LbfgsConfig
from .physics import VARIANTS, ConfigurationError

log = logging.getLogger("pinnproj")


def cmd_gen(args):
    ds = generate(args.pde, round_grid=args.round_grid)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(ds, out)
    print(f"wrote {out} ({ds.nt}x{ds.nx}, c_true={ds.c_true:.3e}, "
          f"drift={ds.max_momentum_drift():.3e})")
    return 0


def cmd_train(args):
    ds = read_dataset(args.data)
    label = Path(args.data).stem
    cfg = ExperimentConfig(
        datasets=[str(args.data)], variants=[args.variant], trials=1, base_seed=args.seed,
        optimizer=LbfgsConfig(max_iterations=args.max_iters), precision=args.precision,
        proj_output_only=args.proj_output_only, output_dir=str(args.out))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace_path = out / "trace.csv" if args.trace else None
    result, params = run_trial(cfg, ds, args.variant, 0, label, trace_path)
    summary = write_reports(cfg, [result], {label: ds}, out)
    if result.ok:
        write_checkpoint(out / "model.txt", params)
        print(f"{label}/{args.variant}: error_u={result.error_u:.4e} error_c={result.error_c:.4e} "
              f"iterations={result.iterations} ({result.termination_reason})")
    else:
        print(f"{label}/{args.variant}: FAILED: {result.message}", file=sys.stderr)
    return 1 if summary["n_failed"] else 0


def cmd_bench(args):
    cfg = ExperimentConfig.from_file(args.config)
    summary = run_experiment(cfg, args.out)
    print(f"{summary['n_trials']} trial(s), {summary['n_failed']} failed; reports in {args.out}")
    for msg in summary["failed_trials"]:
        print(f"failed: {msg}", file=sys.stderr)
    return 1 if summary["n_failed"] else 0


def cmd_report(args):
    from .plotting import render_report

    in_dir = Path(args.in_dir)
    trials_path = in_dir / "trials.csv"
    if not trials_path.is_file():
        print(f"no trials.csv in {in_dir}", file=sys.stderr)
        return 2
    rows = read_trials_csv(trials_path)
    header, table = aggregate(rows)
    figures = render_report(in_dir, header, table)
    if args.format == "csv":
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        for row in table:
            w.writerow([row[c] if c == "dataset" else format(row[c], ".6e") for c in header])
        for p in figures:
            print(f"figure: {p}", file=sys.stderr)
    else:
        failed = [r for r in rows if r["status"] != "ok"]
        doc = {"aggregate": table, "n_trials": len(rows), "n_failed": len(failed),
               "failed_trials": [f"{r['dataset']}/{r['variant']}/{r['trial']}" for r in failed],
               "figures": [str(p) for p in figures]}
        print(json.dumps(doc, indent=2))
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="pinnproj", description=__doc__)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a reference dataset")
    p.add_argument("--pde", required=True, choices=["advection", "burgers", "kdv"])
    p.add_argument("--round-grid", type=int, default=None, metavar="DIGITS",
                   help="round grids and states to this many decimals")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train one variant on one dataset file")
    p.add_argument("--data", required=True)
    p.add_argument("--variant", required=True, choices=list(VARIANTS))
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--max-iters", type=int, default=DESK_MAX_ITERATIONS)
    p.add_argument("--precision", choices=["f64", "f32"], default="f64")
    p.add_argument("--proj-output-only", action="store_true",
                   help="project predictions but train on the unprojected residual")
    p.add_argument("--trace", action="store_true", help="write trace.csv of optimizer iterations")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="run a datasets x variants x trials experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="print the aggregate table and render figures")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, ValueError, OSError) as exc:
        print(f"pinnproj {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
