"""Plot-ready data (CSV) and an optional minimal SVG renderer.

Figures:

``training``
    metrics against training iteration, one series per cell, seed mean and
    standard error (needs the experiment directory for histories and
    trajectories).
``epsilon``
    final metrics against the training fraction, one series per
    ``(L, beta mode)``.
``quality``
    cost histogram of the valid queries of each cell's median run, annotated
    with its utility and tail probability, plus the exact target histogram.
"""

from __future__ import annotations

import csv
import html
import io
from pathlib import Path

import numpy as np

from qcbm.datasets import COSTS, make_space
from qcbm.harness.experiment import read_trajectory
from qcbm.harness.results import ResultTable, decode_cost_hist, format_value
from qcbm.metrics import mean_and_stderr, utility_from_costs
from qcbm.trainer import TrainingHistory

FIGURES = ("training", "epsilon", "quality")
TRAINING_METRICS = ("kl_train", "kl_target", "F", "E", "C_norm", "R_norm", "p")
EPSILON_METRICS = ("F", "R_norm", "C_norm", "p", "kl_train", "kl_target")
SERIES_COLUMNS = ("metric", "series", "x", "y", "y_err")
HIST_COLUMNS = ("series", "cost", "probability", "U", "tail_prob", "run_id")


class PlotError(ValueError):
    """The table cannot produce the requested figure."""


def _require(table: ResultTable, metrics: tuple[str, ...]) -> None:
    if table.is_empty:
        raise PlotError("result table is empty; nothing to plot")
    ok = [r for r in table.runs if r.get("status") == "ok"]
    if not ok:
        raise PlotError("result table has no successful runs")
    for m in metrics:
        if all(r.get(m) is None for r in ok):
            raise PlotError(f"result table has no values for metric {m!r}")


def _csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for r in rows:
        writer.writerow(format_value(v) for v in r)
    return buf.getvalue()


def _series_label(row: dict) -> str:
    return f"L{row['layers']}-{row['beta_mode']}"


def epsilon_series(table: ResultTable) -> list[tuple]:
    _require(table, EPSILON_METRICS)
    groups: dict[str, list[dict]] = {}
    for agg in table.aggregates:
        groups.setdefault(_series_label(agg), []).append(agg)
    rows = []
    for metric in EPSILON_METRICS:
        for label, aggs in groups.items():
            for a in sorted(aggs, key=lambda a: a["epsilon"]):
                rows.append((metric, label, a["epsilon"], a[metric], a[f"{metric}_err"]))
    return rows


def training_series(table: ResultTable) -> list[tuple]:
    _require(table, ())
    if table.root is None:
        raise PlotError("training figure needs the experiment directory (histories, trajectories)")
    rows = []
    per_metric: dict[str, list[tuple]] = {m: [] for m in TRAINING_METRICS}
    for cell_id in table.cell_ids():
        runs = table.cell_runs(cell_id)
        if not runs:
            continue
        curves: dict[str, list[dict[int, float | None]]] = {m: [] for m in TRAINING_METRICS}
        for r in runs:
            hist_path = table.root / "histories" / f"{r['run_id']}.csv"
            traj_path = table.root / "trajectories" / f"{r['run_id']}.csv"
            if not hist_path.exists():
                raise PlotError(f"missing training history for run {r['run_id']} (kl_train, kl_target)")
            if not traj_path.exists():
                raise PlotError(
                    f"missing trajectory for run {r['run_id']} (F, E, C_norm, R_norm, p); "
                    "was eval_every 0?"
                )
            hist = TrainingHistory.from_csv(hist_path)
            curves["kl_train"].append(dict(zip(hist.iterations, hist.kl_train)))
            curves["kl_target"].append(dict(zip(hist.iterations, hist.kl_target)))
            traj = read_trajectory(traj_path)
            for m in ("F", "E", "C_norm", "R_norm", "p"):
                curves[m].append(dict(zip(traj["iteration"], traj[m])))
        for m, per_run in curves.items():
            common = sorted(set.intersection(*(set(c) for c in per_run)))
            for it in common:
                mean, err, _ = mean_and_stderr([c[it] for c in per_run])
                per_metric[m].append((m, cell_id, it, mean, err))
    for m in TRAINING_METRICS:
        rows.extend(per_metric[m])
    return rows


def quality_histograms(table: ResultTable) -> list[tuple]:
    _require(table, ("U", "tail_prob", "cost_hist"))
    cfg = table.config or {}
    n_bits = cfg.get("dataset", {}).get("n_bits")
    rows = []
    hists = []
    for cell_id in table.cell_ids():
        run = table.median_run(cell_id)
        if run is None:
            continue
        hists.append((cell_id, run, decode_cost_hist(run["cost_hist"])))
    if n_bits is None:
        n_bits = 1 - min(min(h) for _, _, h in hists if h)
    bins = list(range(-(n_bits - 1), 0))
    for cell_id, run, hist in hists:
        total = sum(hist.values())
        for c in bins:
            prob = hist.get(c, 0) / total if total else 0.0
            rows.append((cell_id, c, prob, run["U"], run["tail_prob"], run["run_id"]))
    if cfg.get("cost") and cfg.get("dataset"):
        ds = cfg["dataset"]
        space = make_space(ds["kind"], ds["n_bits"], ds.get("k"))
        costs = COSTS[cfg["cost"]].table(ds["n_bits"])[space.members]
        threshold = cfg.get("tail_threshold")
        tail = float(np.mean(costs < threshold)) if threshold is not None else None
        u = utility_from_costs(costs)
        for c in bins:
            rows.append(("target", c, float(np.mean(costs == c)), u, tail, None))
    return rows


def _svg_lines(title: str, series: dict[str, list[tuple]], xlabel: str) -> str:
    w, h, pad = 640, 400, 56
    pts = [p for s in series.values() for p in s if p[1] is not None]
    xs = [p[0] for p in pts]
    ys = [p[1] + (p[2] or 0) for p in pts] + [p[1] - (p[2] or 0) for p in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1

    def sx(x):
        return pad + (x - x0) / (x1 - x0) * (w - 2 * pad)

    def sy(y):
        return h - pad - (y - y0) / (y1 - y0) * (h - 2 * pad)

    palette = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">',
        f'<text x="{w / 2}" y="18" text-anchor="middle" font-size="14">{html.escape(title)}</text>',
        f'<line x1="{pad}" y1="{h - pad}" x2="{w - pad}" y2="{h - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{h - pad}" stroke="black"/>',
        f'<text x="{w / 2}" y="{h - 16}" text-anchor="middle">{html.escape(xlabel)}</text>',
        f'<text x="{pad - 4}" y="{h - pad}" text-anchor="end">{y0:.3g}</text>',
        f'<text x="{pad - 4}" y="{pad + 4}" text-anchor="end">{y1:.3g}</text>',
        f'<text x="{pad}" y="{h - pad + 14}" text-anchor="middle">{x0:.3g}</text>',
        f'<text x="{w - pad}" y="{h - pad + 14}" text-anchor="middle">{x1:.3g}</text>',
    ]
    for i, (label, points) in enumerate(series.items()):
        color = palette[i % len(palette)]
        pts = [p for p in points if p[1] is not None]
        path = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y, _ in pts)
        out.append(f'<polyline fill="none" stroke="{color}" points="{path}"/>')
        for x, y, e in pts:
            if e:
                out.append(
                    f'<line x1="{sx(x):.1f}" y1="{sy(y - e):.1f}" x2="{sx(x):.1f}" '
                    f'y2="{sy(y + e):.1f}" stroke="{color}"/>'
                )
        out.append(
            f'<text x="{w - pad + 4}" y="{pad + 14 * i}" fill="{color}">{html.escape(label)}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _svg_histogram(title: str, bins: list[tuple[int, float]], note: str) -> str:
    w, h, pad = 480, 320, 48
    top = max((p for _, p in bins), default=0.0) or 1.0
    bw = (w - 2 * pad) / max(len(bins), 1)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">',
        f'<text x="{w / 2}" y="18" text-anchor="middle" font-size="14">{html.escape(title)}</text>',
        f'<text x="{w / 2}" y="34" text-anchor="middle">{html.escape(note)}</text>',
        f'<line x1="{pad}" y1="{h - pad}" x2="{w - pad}" y2="{h - pad}" stroke="black"/>',
        f'<text x="{pad - 4}" y="{pad + 4}" text-anchor="end">{top:.3g}</text>',
    ]
    for i, (c, p) in enumerate(bins):
        bh = p / top * (h - 2 * pad)
        x = pad + i * bw
        out.append(
            f'<rect x="{x + 1:.1f}" y="{h - pad - bh:.1f}" width="{bw - 2:.1f}" height="{bh:.1f}" fill="#4c72b0"/>'
        )
        out.append(f'<text x="{x + bw / 2:.1f}" y="{h - pad + 14}" text-anchor="middle">{c}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _render_series(figure: str, rows: list[tuple], xlabel: str) -> dict[str, str]:
    by_metric: dict[str, dict[str, list[tuple]]] = {}
    for metric, label, x, y, err in rows:
        by_metric.setdefault(metric, {}).setdefault(label, []).append((x, y, err))
    files = {}
    for metric, series in by_metric.items():
        if any(p[1] is not None for s in series.values() for p in s):
            files[f"figure_{figure}_{metric}.svg"] = _svg_lines(f"{metric} vs {xlabel}", series, xlabel)
    return files


def _render_quality(rows: list[tuple]) -> dict[str, str]:
    files = {}
    by_series: dict[str, list[tuple]] = {}
    for r in rows:
        by_series.setdefault(r[0], []).append(r)
    for label, rs in by_series.items():
        u, tail = rs[0][3], rs[0][4]
        note = f"U = {u:.3f}" if u is not None else "U = n/a"
        note += f", P(c < t) = {tail:.3f}" if tail is not None else ""
        files[f"figure_quality_{label}.svg"] = _svg_histogram(label, [(r[1], r[2]) for r in rs], note)
    return files


def emit_plots(table: ResultTable, figure: str, out_dir: str | Path, svg: bool = False) -> list[Path]:
    """Write the data file(s) for ``figure`` into ``out_dir``; return the paths.

    All content is computed before anything is written, so a failure leaves
    no partial output.
    """
    if figure not in FIGURES:
        raise PlotError(f"unknown figure {figure!r}; expected one of {FIGURES}")
    files: dict[str, str] = {}
    if figure == "training":
        rows = training_series(table)
        files[f"figure_{figure}.csv"] = _csv(SERIES_COLUMNS, rows)
        if svg:
            files.update(_render_series(figure, rows, "iteration"))
    elif figure == "epsilon":
        rows = epsilon_series(table)
        files[f"figure_{figure}.csv"] = _csv(SERIES_COLUMNS, rows)
        if svg:
            files.update(_render_series(figure, rows, "epsilon"))
    else:
        rows = quality_histograms(table)
        files[f"figure_{figure}.csv"] = _csv(HIST_COLUMNS, rows)
        if svg:
            files.update(_render_quality(rows))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, text in files.items():
        path = out / name
        path.write_text(text)
        paths.append(path)
    return paths
