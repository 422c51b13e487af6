"""Train-then-evaluate sweeps with resumable, append-only persistence.

Layout of an experiment directory::

    manifest.json        config, completed and failed run ids, timings
    runs.csv             one row per finished attempt, in completion order
    results.csv          run rows in config order plus one aggregate per cell
    histories/<run>.csv  best NLL and KL values per logged iteration
    trajectories/<run>.csv  metrics of Q fresh queries every ``eval_every`` iterations
    params/<run>.json    best parameters with their circuit
"""

from __future__ import annotations

import csv
import json
import os
import time
import traceback
from collections.abc import Callable
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from qcbm.ansatz import CircuitSpec, build_circuit
from qcbm.datasets import (
    COSTS,
    make_space,
    reweight_softmax,
    sample_training_set,
    temperature_from_costs,
)
from qcbm.harness.config import Cell, ConfigError, ExperimentConfig, RunSpec
from qcbm.harness.results import (
    COLUMNS,
    RESULTS_FILE,
    RUNS_FILE,
    ResultTable,
    encode_cost_hist,
    format_value,
    parse_row,
)
from qcbm.harness.seeding import derive_rng, derive_seed
from qcbm.metrics import SUMMARY_METRICS, evaluate, generate_queries, random_baseline
from qcbm.trainer import TrainingHistory, kl_divergence, model_distribution, save_parameters, train

MANIFEST_FILE = "manifest.json"
BASELINE_FILE = "baseline.csv"
TRAJECTORY_COLUMNS = ("iteration", *SUMMARY_METRICS)


@dataclass
class RunOutcome:
    row: dict
    history: TrainingHistory | None = None
    trajectory: list[tuple] | None = None
    params: np.ndarray | None = None
    circuit: CircuitSpec | None = None
    elapsed: float = 0.0


def _cost_histogram(queries: np.ndarray, cost_table: np.ndarray) -> str:
    values, counts = np.unique(cost_table[queries], return_counts=True)
    return encode_cost_hist({int(v): int(n) for v, n in zip(values, counts)})


def _base_row(config: ExperimentConfig, run: RunSpec) -> dict:
    row = {c: None for c in COLUMNS}
    row.update(
        row_type="run",
        cell_id=run.cell.cell_id,
        run_id=run.run_id,
        layers=run.cell.layers,
        epsilon=run.cell.epsilon,
        beta_mode=run.cell.beta_mode,
        seed_index=run.seed_index,
    )
    return row


def _training_set(config: ExperimentConfig, cell: Cell, key: str, space):
    """Sample (and optionally reweight) a training set; returns ``(ts, T)``."""
    ts = sample_training_set(
        space,
        cell.epsilon,
        derive_rng(config.master_seed, key, "train_set"),
        rounding=config.rounding,
        seed=derive_seed(config.master_seed, key, "train_set"),
    )
    factor = config.beta_factors[cell.beta_mode]
    temperature = None
    if config.cost is not None:
        cost = COSTS[config.cost]
        try:
            temperature = temperature_from_costs(ts, cost)
        except ValueError:
            if factor > 0:
                raise
        if factor > 0:
            ts = reweight_softmax(ts, cost, factor / temperature)
    return ts, temperature


def execute_run(config: ExperimentConfig, run: RunSpec) -> RunOutcome:
    """Build, train and evaluate one run. Exceptions are caught into the row."""
    start = time.perf_counter()
    row = _base_row(config, run)
    try:
        outcome = _execute(config, run, row)
    except Exception as exc:  # a failed run must not stop the sweep
        frame = traceback.extract_tb(exc.__traceback__)[-1]
        where = f"{Path(frame.filename).name}:{frame.lineno}"
        row.update(status="failed", error=f"{type(exc).__name__}: {exc} ({where})")
        outcome = RunOutcome(row)
    outcome.elapsed = time.perf_counter() - start
    return outcome


def _execute(config: ExperimentConfig, run: RunSpec, row: dict) -> RunOutcome:
    ds = config.dataset
    key = run.run_id
    space = make_space(ds.kind, ds.n_bits, ds.k)
    cost = COSTS[config.cost] if config.cost is not None else None
    ts, temperature = _training_set(config, run.cell, key, space)
    circuit = build_circuit(ds.n_bits, run.cell.layers, config.topology)
    target = space.target_distribution()
    trainer_cfg = config.trainer.to_trainer_config(derive_seed(config.master_seed, key, "trainer"))

    trajectory: list[tuple] = []
    traj_rng = derive_rng(config.master_seed, key, "trajectory")

    def snapshot(iteration: int, best: np.ndarray) -> None:
        if config.eval_every and iteration % config.eval_every == 0:
            probs = model_distribution(circuit, best)
            batch = generate_queries(probs, config.queries, ds.n_bits, traj_rng)
            rep = evaluate(batch, ts, space, cost, config.tail_threshold)
            trajectory.append((iteration, *(getattr(rep, m) for m in SUMMARY_METRICS)))

    best, history = train(circuit, ts, trainer_cfg, target=target, callback=snapshot)

    probs = model_distribution(circuit, best)
    batch = generate_queries(probs, config.queries, ds.n_bits, derive_rng(config.master_seed, key, "sampling"))
    report = evaluate(batch, ts, space, cost, config.tail_threshold)
    final_iteration = history.iterations[-1]
    if config.eval_every and (not trajectory or trajectory[-1][0] != final_iteration):
        trajectory.append((final_iteration, *(getattr(report, m) for m in SUMMARY_METRICS)))

    row.update(report.to_dict())
    row.update(
        status="ok",
        beta=ts.beta if ts.beta is not None else 0.0,
        n_params=circuit.n_params,
        temperature=temperature,
        final_nll=history.best_nll[-1],
        kl_train=kl_divergence(ts.distribution(), probs),
        kl_target=kl_divergence(target, probs),
    )
    if cost is not None:
        valid = batch.queries[space.mask[batch.queries]]
        row["cost_hist"] = _cost_histogram(valid, cost.table(ds.n_bits))
    return RunOutcome(row, history, trajectory, best, circuit)


class _Store:
    """Single writer for everything under the experiment directory."""

    def __init__(self, root: Path, config: ExperimentConfig):
        self.root = root
        self.config = config
        for sub in ("histories", "trajectories", "params"):
            (root / sub).mkdir(parents=True, exist_ok=True)
        self.manifest_path = root / MANIFEST_FILE
        self.runs_path = root / RUNS_FILE
        self.manifest = self._load_manifest()
        self._drop_torn_tail()

    def _drop_torn_tail(self) -> None:
        """Cut a partially written last line left by a killed run."""
        if not self.runs_path.exists():
            return
        data = self.runs_path.read_bytes()
        if data and not data.endswith(b"\n"):
            self.runs_path.write_bytes(data[: data.rfind(b"\n") + 1])

    def _load_manifest(self) -> dict:
        cfg = self.config.to_dict()
        if self.manifest_path.exists():
            manifest = json.loads(self.manifest_path.read_text())
            if _science_config(manifest.get("config", {})) != _science_config(cfg):
                raise ConfigError(
                    f"{self.root} holds results of a different experiment; "
                    "use a fresh output directory"
                )
            manifest["config"] = cfg
            return manifest
        return {"schema_version": 1, "config": cfg, "completed": [], "failed": {}, "elapsed_s": {}}

    def existing_rows(self) -> dict[str, dict]:
        """Latest row per run id from the append-only log."""
        rows: dict[str, dict] = {}
        if self.runs_path.exists():
            with open(self.runs_path, newline="") as fh:
                for raw in csv.DictReader(fh):
                    row = parse_row(raw)
                    rows[row["run_id"]] = row
        return rows

    def record(self, outcome: RunOutcome) -> None:
        row = outcome.row
        run_id = row["run_id"]
        if outcome.history is not None:
            outcome.history.to_csv(self.root / "histories" / f"{run_id}.csv")
        if outcome.trajectory:
            _write_trajectory(self.root / "trajectories" / f"{run_id}.csv", outcome.trajectory)
        if outcome.params is not None:
            save_parameters(self.root / "params" / f"{run_id}.json", outcome.circuit, outcome.params)
        new_file = not self.runs_path.exists()
        with open(self.runs_path, "a", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            if new_file:
                writer.writerow(COLUMNS)
            writer.writerow(format_value(row.get(c)) for c in COLUMNS)
            fh.flush()
            os.fsync(fh.fileno())
        m = self.manifest
        if row["status"] == "ok":
            if run_id not in m["completed"]:
                m["completed"].append(run_id)
            m["failed"].pop(run_id, None)
        else:
            m["failed"][run_id] = row["error"]
        m["elapsed_s"][run_id] = round(outcome.elapsed, 3)
        self.save_manifest()

    def save_manifest(self) -> None:
        tmp = self.manifest_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.manifest, indent=2, sort_keys=True))
        os.replace(tmp, self.manifest_path)


def _science_config(cfg: dict) -> dict:
    """Config keys that change results; parallelism and paths do not."""
    return {k: v for k, v in cfg.items() if k not in ("parallelism", "output_dir")}


def _write_trajectory(path: Path, rows: list[tuple]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAJECTORY_COLUMNS)
        for r in rows:
            writer.writerow(format_value(v) for v in r)


def read_trajectory(path: str | Path) -> dict[str, list]:
    """Column-wise trajectory; absent values are ``None``."""
    cols: dict[str, list] = {c: [] for c in TRAJECTORY_COLUMNS}
    with open(path, newline="") as fh:
        for raw in csv.DictReader(fh):
            for c in TRAJECTORY_COLUMNS:
                text = raw[c]
                cols[c].append(None if text == "" else int(text) if c == "iteration" else float(text))
    return cols


def run_experiment(
    config: ExperimentConfig,
    resume: bool = True,
    progress: Callable[[RunOutcome, int, int], None] | None = None,
) -> ResultTable:
    """Run every pending ``(cell, seed)`` and write the result table.

    Runs already recorded as successful are skipped when ``resume`` is set;
    failed ones are retried. Runs execute in a process pool of
    ``config.parallelism`` workers; only this process writes files.
    """
    root = config.resolved_output_dir()
    root.mkdir(parents=True, exist_ok=True)
    if not resume:
        for name in (RUNS_FILE, MANIFEST_FILE, RESULTS_FILE):
            (root / name).unlink(missing_ok=True)
    store = _Store(root, config)
    done = {k for k, r in store.existing_rows().items() if r["status"] == "ok"}
    pending = [r for r in config.runs() if r.run_id not in done]
    store.save_manifest()

    total = len(pending)
    if config.parallelism > 1 and total > 1:
        with ProcessPoolExecutor(max_workers=min(config.parallelism, total)) as pool:
            futures = [pool.submit(execute_run, config, r) for r in pending]
            for i, fut in enumerate(as_completed(futures), 1):
                outcome = fut.result()
                store.record(outcome)
                if progress:
                    progress(outcome, i, total)
    else:
        for i, run in enumerate(pending, 1):
            outcome = execute_run(config, run)
            store.record(outcome)
            if progress:
                progress(outcome, i, total)

    latest = store.existing_rows()
    rows = [latest[r.run_id] for r in config.runs()]
    table = ResultTable.build(rows, config=config.to_dict(), root=root)
    table.to_csv(root / RESULTS_FILE)
    return table


def run_baseline(config: ExperimentConfig) -> ResultTable:
    """Random-search baseline: uniform bitstrings, no training, per epsilon.

    Each epsilon gets one training set and ``config.baseline_runs`` batches of
    ``config.queries`` uniform samples over all ``2^N`` bitstrings.
    """
    ds = config.dataset
    space = make_space(ds.kind, ds.n_bits, ds.k)
    cost = COSTS[config.cost] if config.cost is not None else None
    rows = []
    for eps in config.epsilons:
        cell = Cell(0, float(eps), "none")
        cell_id = f"baseline-eps{cell.epsilon!r}"
        ts, temperature = _training_set(config, cell, cell_id, space)
        summary = random_baseline(
            space, ts, config.queries, config.baseline_runs,
            derive_rng(config.master_seed, cell_id, "sampling"),
            cost, config.tail_threshold,
        )
        for i, report in enumerate(summary.reports):
            row = {c: None for c in COLUMNS}
            row.update(report.to_dict())
            row.update(
                row_type="run", cell_id=cell_id, run_id=f"{cell_id}-r{i}", epsilon=cell.epsilon,
                beta_mode="none", beta=0.0, seed_index=i, status="ok", temperature=temperature,
            )
            rows.append(row)
    root = config.resolved_output_dir()
    table = ResultTable.build(rows, config=config.to_dict(), root=root)
    root.mkdir(parents=True, exist_ok=True)
    table.to_csv(root / BASELINE_FILE)
    return table
