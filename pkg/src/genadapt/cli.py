"""Command line entry point: ``genadapt gen-data | run | report``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .errors import AdaptError, ConfigError
from .evaluation import load_records, write_report
from .experiment import ExperimentConfig, generate_datasets, run_grid

EXIT_OK, EXIT_CELL_FAILURE, EXIT_CONFIG = 0, 1, 2


def _load(args):
    cfg = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def cmd_gen_data(args):
    cfg = _load(args)
    written, manifest = generate_datasets(cfg, args.out)
    for path, entry in zip(written, manifest["datasets"]):
        print(f"{entry['id']}: {entry['rows']} rows, drifts at {entry['drift_indices']} -> {path}")
    return EXIT_OK


def cmd_run(args):
    cfg = _load(args)
    jobs = args.jobs or os.cpu_count() or 1
    done, failed = run_grid(cfg, args.out, resume=args.resume, jobs=jobs)
    print(f"{done} cells completed, {len(failed)} failed", file=sys.stderr)
    return EXIT_CELL_FAILURE if failed else EXIT_OK


def cmd_report(args):
    if args.records is not None:
        records_dir = Path(args.records)
    elif args.config is not None:
        records_dir = _load(args).out_dir / "records"
    else:
        raise ConfigError("report needs --records or --config")
    out = Path(args.out) if args.out else records_dir.parent / "report"
    records = load_records(records_dir)
    _, tables = write_report(records, out, alpha=args.alpha, figures=not args.no_figures)
    for t in tables:
        print(f"n = {t.batch_size} ({len(t.datasets)} datasets, {t.task})")
        if t.ranks is None or not t.ranks.size:
            print("  no complete rows to rank")
            continue
        for name, rank in sorted(zip(t.compared, t.mean_ranks), key=lambda p: (p[1], p[0])):
            print(f"  {name:<16} {rank:6.3f}")
        if t.friedman == t.friedman:
            print(f"  Friedman chi2 = {t.friedman:.4f}, p = {t.pvalue:.4g}, CD = {t.cd:.4f}")
    print(f"report written to {out}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="genadapt", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write synthetic datasets as CSV plus a manifest")
    g.add_argument("--config", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output root (default: the config's out)")
    g.set_defaults(func=cmd_gen_data)

    r = sub.add_parser("run", help="run the experiment grid")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--resume", action="store_true", help="skip cells that already have records")
    r.add_argument("--jobs", type=int, default=None, help="parallel cells (default: all cores)")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("report", help="score tables, rank statistics and rank diagrams")
    s.add_argument("--records", help="directory of run records")
    s.add_argument("--config", help="use <out>/records of this config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="report directory (default: next to the records)")
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AdaptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CELL_FAILURE


if __name__ == "__main__":
    sys.exit(main())
