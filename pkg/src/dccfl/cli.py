"""Command-line entry point.

Subcommands:
  run     execute the configured method for all seeds, write results
  sweep   score every candidate threshold, write the sweep table
  report  aggregate a results file into a per-method summary
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .harness import load_config, read_results, run_method, sweep_threshold, write_results


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dccfl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="JSON or TOML experiment config")
        p.add_argument("--seed", type=int, default=None, help="override master seed")
        p.add_argument("--out", default=None, help="output file path")
        p.add_argument("--format", choices=["csv", "jsonl"], default="csv")
        p.add_argument("--method", choices=["dc_cfl", "dc", "local"], default=None)
        p.add_argument("--clients", type=int, default=None, help="override client count")
        p.add_argument("--t", type=float, default=None, help="pin the clustering threshold")
        p.add_argument("--runs", type=int, default=None, help="override number of runs")

    run_p = sub.add_parser("run", help="run the configured method")
    add_common(run_p)

    sweep_p = sub.add_parser("sweep", help="evaluate every candidate threshold")
    add_common(sweep_p)

    report_p = sub.add_parser("report", help="summarize a results file")
    report_p.add_argument("path", help="results file produced by `dccfl run`")
    report_p.add_argument("--format", choices=["csv", "jsonl"], default=None)
    return parser


def _config_from_args(args) -> "ExperimentConfig":
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    if args.method is not None:
        cfg = replace(cfg, method=args.method)
    if args.runs is not None:
        cfg = replace(cfg, num_runs=args.runs)
    if args.clients is not None:
        cfg = replace(cfg, partition=replace(cfg.partition, num_clients=args.clients))
    if args.t is not None:
        cfg = replace(cfg, t_candidates=(args.t,))
    return cfg


def _cmd_run(args) -> int:
    cfg = _config_from_args(args)
    records = run_method(cfg)
    out = Path(args.out) if args.out else Path(f"results_{cfg.name}_{cfg.method}.{args.format}")
    write_results(records, out, args.format)
    for rec in records:
        t_str = "-" if rec.t is None else f"{rec.t:.2f}"
        print(
            f"{rec.dataset} {rec.partition} {rec.method} seed={rec.seed} "
            f"t={t_str} mean_acc={rec.mean_accuracy:.4f} ({rec.wall_seconds:.1f}s)"
        )
    print(f"wrote {len(records)} records to {out}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = _config_from_args(args)
    cfg = replace(cfg, method="dc_cfl")
    t_values = cfg.t_candidates if args.t is None else (args.t,)
    rows = sweep_threshold(cfg, t_values)
    out = Path(args.out) if args.out else Path(f"sweep_{cfg.name}.csv")
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "mean_val_acc", "mean_test_acc", "mean_num_clusters"])
        for row in rows:
            writer.writerow(
                [
                    row.t,
                    repr(row.mean_validation_accuracy),
                    repr(row.mean_test_accuracy),
                    row.mean_num_clusters,
                ]
            )
    for row in rows:
        print(
            f"t={row.t:.2f} val={row.mean_validation_accuracy:.4f} "
            f"test={row.mean_test_accuracy:.4f} clusters={row.mean_num_clusters:.1f}"
        )
    print(f"wrote sweep table to {out}")
    return 0


def _cmd_report(args) -> int:
    records = read_results(args.path, args.format)
    groups: dict[tuple, list] = {}
    for rec in records:
        groups.setdefault((rec.dataset, rec.partition, rec.method), []).append(rec)
    print(f"{'dataset':<16} {'partition':<28} {'method':<8} {'runs':>4} {'mean':>8} {'std':>8}")
    for (dataset, partition, method), group in sorted(groups.items()):
        means = np.array([g.mean_accuracy for g in group])
        print(
            f"{dataset:<16} {partition:<28} {method:<8} {len(group):>4} "
            f"{means.mean():>8.4f} {means.std():>8.4f}"
        )
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        return _cmd_report(args)
    except Exception as exc:  # structured failure for scripting callers
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
