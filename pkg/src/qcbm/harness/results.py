"""Result tables: one row per run plus one aggregate row per cell.

Rows are plain dicts keyed by :data:`COLUMNS`. Floats are written with
``repr`` so a table survives a CSV round trip bit for bit, and the
aggregates can be re-derived from the run rows on load.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

from qcbm.metrics import MetricsReport, mean_and_stderr, median_run_index

RESULTS_FILE = "results.csv"
RUNS_FILE = "runs.csv"
AGGREGATE_TOLERANCE = 1e-12

AGG_METRICS = (
    "F", "R", "R_norm", "C", "C_norm", "C_norm_asymptotic", "p", "E", "U", "tail_prob",
    "kl_train", "kl_target", "final_nll",
)

RUN_COLUMNS = (
    "row_type", "cell_id", "run_id", "layers", "epsilon", "beta_mode", "beta", "seed_index",
    "status", "error", "n_params", "temperature", "final_nll", "kl_train", "kl_target",
    *(f for f in MetricsReport.FIELDS if f != "epsilon"), "cost_hist",
)
AGG_COLUMNS = (
    "n_runs", "n_failed", *(f"{m}_err" for m in AGG_METRICS), "F_absent", "median",
)
COLUMNS = RUN_COLUMNS + AGG_COLUMNS

_INT = {
    "layers", "seed_index", "n_params", "g_train", "g_new", "g_sol_multi", "g_sol_unique",
    "q_total", "space_size", "d", "n_runs", "n_failed", "F_absent",
}
_FLOAT = {
    "epsilon", "beta", "temperature", "final_nll", "kl_train", "kl_target",
    "F", "R", "R_norm", "C", "C_norm", "C_norm_asymptotic", "p", "E", "U", "tail_prob",
    *(f"{m}_err" for m in AGG_METRICS),
}


class ResultTableError(ValueError):
    """A result table is malformed or its aggregates do not match its runs."""


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_row(raw: dict[str, str]) -> dict:
    row: dict = {}
    for key, text in raw.items():
        if text == "" or text is None:
            row[key] = None
        elif key in _INT:
            row[key] = int(text)
        elif key in _FLOAT:
            row[key] = float(text)
        else:
            row[key] = text
    return row


def encode_cost_hist(counts: dict[int, int]) -> str:
    return ";".join(f"{c}:{n}" for c, n in sorted(counts.items()))


def decode_cost_hist(text: str | None) -> dict[int, int]:
    if not text:
        return {}
    out = {}
    for part in text.split(";"):
        c, n = part.split(":")
        out[int(c)] = int(n)
    return out


def _is_ok(row: dict) -> bool:
    return row.get("status") == "ok"


def aggregate_cell(runs: list[dict]) -> dict:
    """Mean, standard error and median marker for the runs of one cell."""
    first = runs[0]
    ok = [r for r in runs if _is_ok(r)]
    agg = {c: None for c in COLUMNS}
    agg.update(
        row_type="aggregate",
        cell_id=first["cell_id"],
        layers=first.get("layers"),
        epsilon=first.get("epsilon"),
        beta_mode=first.get("beta_mode"),
        beta=None,
        status="ok" if len(ok) == len(runs) else "partial" if ok else "failed",
        n_runs=len(ok),
        n_failed=len(runs) - len(ok),
    )
    for m in AGG_METRICS:
        mean, err, absent = mean_and_stderr([r.get(m) for r in ok])
        agg[m], agg[f"{m}_err"] = mean, err
        if m == "F":
            agg["F_absent"] = absent
    scored = [r for r in ok if r.get("F") is not None]
    if scored:
        reports = [MetricsReport.from_dict(r) for r in scored]
        agg["median"] = scored[median_run_index(reports)]["run_id"]
    return agg


def _mark_medians(runs: list[dict], aggregates: list[dict]) -> None:
    medians = {a["median"] for a in aggregates if a["median"]}
    for r in runs:
        r["median"] = "1" if r["run_id"] in medians else "0"


@dataclass
class ResultTable:
    """Run rows (in config order) and per-cell aggregates.

    ``root`` is the experiment directory when the table was produced by or
    loaded from one; it gives access to training histories and trajectories.
    """

    runs: list[dict]
    aggregates: list[dict]
    config: dict | None = None
    root: Path | None = None

    @classmethod
    def build(cls, runs: list[dict], config: dict | None = None, root: Path | None = None) -> ResultTable:
        runs = [{c: r.get(c) for c in COLUMNS} for r in runs]
        for r in runs:
            r["row_type"] = "run"
        by_cell: dict[str, list[dict]] = {}
        for r in runs:
            by_cell.setdefault(r["cell_id"], []).append(r)
        aggregates = [aggregate_cell(rs) for rs in by_cell.values()]
        _mark_medians(runs, aggregates)
        return cls(runs, aggregates, config, root)

    @property
    def failed(self) -> list[dict]:
        return [r for r in self.runs if not _is_ok(r)]

    @property
    def is_empty(self) -> bool:
        return not self.runs

    def cell_ids(self) -> list[str]:
        return [a["cell_id"] for a in self.aggregates]

    def cell_runs(self, cell_id: str, ok_only: bool = True) -> list[dict]:
        return [r for r in self.runs if r["cell_id"] == cell_id and (_is_ok(r) or not ok_only)]

    def aggregate(self, cell_id: str) -> dict:
        for a in self.aggregates:
            if a["cell_id"] == cell_id:
                return a
        raise KeyError(cell_id)

    def median_run(self, cell_id: str) -> dict | None:
        run_id = self.aggregate(cell_id)["median"]
        return next((r for r in self.runs if r["run_id"] == run_id), None)

    def to_csv_string(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        for cell_id in self.cell_ids():
            for r in self.cell_runs(cell_id, ok_only=False):
                writer.writerow(format_value(r.get(c)) for c in COLUMNS)
            agg = self.aggregate(cell_id)
            writer.writerow(format_value(agg.get(c)) for c in COLUMNS)
        return buf.getvalue()

    def to_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv_string())

    def verify(self) -> None:
        """Check every aggregate against a recomputation from the run rows."""
        for agg in self.aggregates:
            runs = self.cell_runs(agg["cell_id"], ok_only=False)
            if not runs:
                raise ResultTableError(f"aggregate {agg['cell_id']} has no run rows")
            fresh = aggregate_cell(runs)
            for key in ("n_runs", "n_failed", "F_absent", "median"):
                if fresh[key] != agg[key]:
                    raise ResultTableError(
                        f"cell {agg['cell_id']}: {key} is {agg[key]!r}, recomputed {fresh[key]!r}"
                    )
            for m in AGG_METRICS:
                for key in (m, f"{m}_err"):
                    a, b = agg[key], fresh[key]
                    if (a is None) != (b is None) or (
                        a is not None and not math.isclose(a, b, rel_tol=0, abs_tol=AGGREGATE_TOLERANCE)
                    ):
                        raise ResultTableError(
                            f"cell {agg['cell_id']}: {key} is {a!r}, recomputed {b!r}"
                        )

    @classmethod
    def from_csv_string(cls, text: str, verify: bool = True) -> ResultTable:
        reader = csv.DictReader(io.StringIO(text))
        missing = [c for c in ("row_type", "cell_id", "run_id") if c not in (reader.fieldnames or [])]
        if missing:
            raise ResultTableError(f"result table lacks columns: {', '.join(missing)}")
        runs, aggregates = [], []
        for raw in reader:
            row = parse_row(raw)
            for c in COLUMNS:
                row.setdefault(c, None)
            (aggregates if row["row_type"] == "aggregate" else runs).append(row)
        table = cls(runs, aggregates)
        if verify:
            table.verify()
        return table

    @classmethod
    def load(cls, path: str | Path, verify: bool = True) -> ResultTable:
        """Load ``results.csv`` (or a directory holding it) and check its aggregates."""
        path = Path(path)
        root = None
        if path.is_dir():
            root = path
            path = path / RESULTS_FILE
        try:
            text = path.read_text()
        except OSError as exc:
            raise ResultTableError(f"cannot read result table {path}: {exc}") from exc
        table = cls.from_csv_string(text, verify)
        root = root or path.parent
        table.root = root
        manifest = root / "manifest.json"
        if manifest.exists():
            table.config = json.loads(manifest.read_text()).get("config")
        return table
