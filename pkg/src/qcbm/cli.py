"""Command-line entry point: ``qcbm {run,baseline,plot,report,validate-config}``.

Exit codes: 0 success, 1 at least one run failed, 2 bad configuration or input.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from qcbm.harness.config import OUTPUT_ROOT_ENV, ConfigError, ExperimentConfig
from qcbm.harness.experiment import BASELINE_FILE, RunOutcome, run_baseline, run_experiment
from qcbm.harness.plots import FIGURES, PlotError, emit_plots
from qcbm.harness.results import ResultTable, ResultTableError

EXIT_OK = 0
EXIT_RUN_FAILURES = 1
EXIT_CONFIG_ERROR = 2

REPORT_COLUMNS = ("F", "R_norm", "C_norm", "p", "E", "U", "tail_prob", "kl_target", "kl_train")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    return cfg.with_overrides(
        master_seed=getattr(args, "seed", None),
        parallelism=getattr(args, "parallelism", None),
        max_iterations=getattr(args, "iterations", None),
        output_dir=getattr(args, "output", None),
    )


def _progress(outcome: RunOutcome, i: int, total: int) -> None:
    row = outcome.row
    if row["status"] == "ok":
        detail = f"F={_fmt(row['F'])} R_norm={_fmt(row['R_norm'])} C_norm={_fmt(row['C_norm'])}"
    else:
        detail = row["error"]
    print(f"[{i}/{total}] {row['run_id']} {row['status']} ({outcome.elapsed:.1f}s) {detail}", flush=True)


def _fmt(v, err=None) -> str:
    if v is None:
        return "-"
    text = f"{v:.4g}"
    if err is not None:
        text += f" ± {err:.2g}"
    return text


def cmd_run(args) -> int:
    cfg = _load_config(args)
    table = run_experiment(cfg, resume=not args.fresh, progress=None if args.quiet else _progress)
    root = cfg.resolved_output_dir()
    print(f"wrote {root / 'results.csv'}")
    if table.failed:
        print(f"{len(table.failed)} run(s) failed", file=sys.stderr)
        return EXIT_RUN_FAILURES
    return EXIT_OK


def cmd_baseline(args) -> int:
    cfg = _load_config(args)
    if args.runs is not None or args.queries is not None:
        cfg = replace(
            cfg,
            baseline_runs=args.runs if args.runs is not None else cfg.baseline_runs,
            queries=args.queries if args.queries is not None else cfg.queries,
        )
    table = run_baseline(cfg)
    print(f"wrote {cfg.resolved_output_dir() / BASELINE_FILE}")
    if not args.quiet:
        print(format_report(table, aggregates_only=True))
    return EXIT_OK


def cmd_plot(args) -> int:
    table = ResultTable.load(args.results)
    out = Path(args.out) if args.out else (table.root / "plots")
    for path in emit_plots(table, args.figure, out, svg=args.svg):
        print(path)
    return EXIT_OK


def format_report(table: ResultTable, aggregates_only: bool = False) -> str:
    header = ["cell/run", "n", *REPORT_COLUMNS]
    lines = []
    for cell_id in table.cell_ids():
        agg = table.aggregate(cell_id)
        if not aggregates_only:
            for r in table.cell_runs(cell_id, ok_only=False):
                mark = "*" if r.get("median") == "1" else " "
                if r["status"] != "ok":
                    lines.append([f" {mark}{r['run_id']}", "", f"FAILED: {r['error']}"])
                    continue
                lines.append([f" {mark}{r['run_id']}", "", *(_fmt(r[c]) for c in REPORT_COLUMNS)])
        lines.append([cell_id, str(agg["n_runs"]), *(_fmt(agg[c], agg[f"{c}_err"]) for c in REPORT_COLUMNS)])
    widths = [max(len(str(row[i])) for row in [header, *lines] if i < len(row)) for i in range(len(header))]
    out = []
    for row in [header, *lines]:
        out.append("  ".join(str(v).ljust(widths[i]) for i, v in enumerate(row)).rstrip())
    return "\n".join(out)


def cmd_report(args) -> int:
    table = ResultTable.load(args.results)
    print(format_report(table, aggregates_only=args.aggregates_only))
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _load_config(args)
    runs = cfg.runs()
    print(
        f"ok: {cfg.name}: {len(cfg.cells())} cells x {cfg.seeds} seeds = {len(runs)} runs, "
        f"output {cfg.resolved_output_dir()}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qcbm",
        description="Train quantum circuit Born machines and measure their generalization.",
        epilog=f"Relative output directories are placed under ${OUTPUT_ROOT_ENV} when it is set.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def with_overrides(p):
        p.add_argument("config", help="experiment config (JSON)")
        p.add_argument("--seed", type=int, help="override master_seed")
        p.add_argument("--output", help="override output_dir")

    p = sub.add_parser("run", help="train and evaluate every (cell, seed)")
    with_overrides(p)
    p.add_argument("--parallelism", type=int, help="override the worker count")
    p.add_argument("--iterations", type=int, help="override trainer.max_iterations")
    p.add_argument("--fresh", action="store_true", help="ignore previous results in the output dir")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("baseline", help="random-search baseline per epsilon")
    with_overrides(p)
    p.add_argument("--runs", type=int, help="override baseline_runs")
    p.add_argument("--queries", type=int, help="override queries")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("plot", help="write plot data (and optional SVG) for a figure")
    p.add_argument("results", help="experiment directory or results CSV")
    p.add_argument("--figure", choices=FIGURES, required=True)
    p.add_argument("--out", help="output directory (default <results>/plots)")
    p.add_argument("--svg", action="store_true", help="also render SVG files")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("report", help="pretty-print a result table")
    p.add_argument("results", help="experiment directory or results CSV")
    p.add_argument("--aggregates-only", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("validate-config", help="check a config without running it")
    with_overrides(p)
    p.add_argument("--parallelism", type=int)
    p.add_argument("--iterations", type=int)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except (ResultTableError, PlotError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
