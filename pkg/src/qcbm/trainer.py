"""NLL / KL objectives and CMA-ES training of a QCBM circuit."""

from __future__ import annotations

import csv
import json
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from qcbm.ansatz import CircuitSpec, execute, execute_batch
from qcbm.cmaes import CMAConfig, cma_es_minimize
from qcbm.datasets import TrainingSet
from qcbm.statevector import probabilities, sample_from_probabilities

NLL_FLOOR = 1e-8

# The optimizer settings double as the trainer settings.
TrainerConfig = CMAConfig


@dataclass(frozen=True)
class ObjectiveContext:
    circuit: CircuitSpec
    training_set: TrainingSet
    nll_floor: float = NLL_FLOOR

    def __post_init__(self) -> None:
        if self.nll_floor <= 0:
            raise ValueError("nll_floor must be positive")
        if self.training_set.n_bits != self.circuit.n_qubits:
            raise ValueError(
                f"training set has {self.training_set.n_bits} bits, "
                f"circuit has {self.circuit.n_qubits} qubits"
            )


@dataclass
class TrainingHistory:
    """Per-logged-iteration best NLL and KL values.

    ``kl_target`` entries are ``None`` when no target was given.
    """

    iterations: list[int] = field(default_factory=list)
    best_nll: list[float] = field(default_factory=list)
    kl_train: list[float] = field(default_factory=list)
    kl_target: list[float | None] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    evaluations: int = 0

    COLUMNS = ("iteration", "best_nll", "kl_train", "kl_target")

    def rows(self) -> list[tuple]:
        return list(zip(self.iterations, self.best_nll, self.kl_train, self.kl_target))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.COLUMNS)
            for it, nll, klt, klg in self.rows():
                writer.writerow([it, repr(nll), repr(klt), "" if klg is None else repr(klg)])

    @classmethod
    def from_csv(cls, path: str | Path) -> TrainingHistory:
        hist = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                hist.iterations.append(int(row["iteration"]))
                hist.best_nll.append(float(row["best_nll"]))
                hist.kl_train.append(float(row["kl_train"]))
                hist.kl_target.append(float(row["kl_target"]) if row["kl_target"] else None)
        return hist


def model_distribution(
    circuit: CircuitSpec,
    params: np.ndarray,
    mode: str = "exact",
    shots: int | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Born probabilities of the circuit output.

    ``mode="exact"`` returns ``|<x|psi>|^2``; ``mode="sampled"`` returns
    empirical frequencies of ``shots`` measurements, as a hardware run would.
    """
    probs = probabilities(execute(circuit, params))
    if mode == "exact":
        return probs
    if mode == "sampled":
        if shots is None or rng is None:
            raise ValueError("sampled mode needs shots and rng")
        counts = np.bincount(sample_from_probabilities(probs, shots, rng), minlength=probs.shape[0])
        return counts / shots
    raise ValueError(f"unknown mode {mode!r}")


def nll_cost(ctx: ObjectiveContext, model_probs: np.ndarray) -> float:
    """Weighted negative log-likelihood of the training samples, floored."""
    ts = ctx.training_set
    p = np.asarray(model_probs)[ts.indices]
    return float(-np.dot(ts.weights, np.log(np.maximum(ctx.nll_floor, p))))


def kl_divergence(p: np.ndarray, q: np.ndarray, floor: float = NLL_FLOOR) -> float:
    """``KL(p || q)`` in nats, summed over the support of ``p``; ``q`` is floored."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    support = p > 0
    ps = p[support]
    return float(np.sum(ps * (np.log(ps) - np.log(np.maximum(floor, q[support])))))


def _batched_nll(ctx: ObjectiveContext) -> Callable[[np.ndarray], np.ndarray]:
    ts = ctx.training_set
    buf: dict[str, np.ndarray] = {}

    def objective(params: np.ndarray) -> np.ndarray:
        amps = execute_batch(ctx.circuit, params, buf.get("amps"))
        buf["amps"] = amps
        a = amps[:, ts.indices]
        probs = a.real**2 + a.imag**2
        return -np.log(np.maximum(ctx.nll_floor, probs)) @ ts.weights

    return objective


def train(
    circuit: CircuitSpec,
    ts: TrainingSet,
    config: TrainerConfig,
    target: np.ndarray | None = None,
    nll_floor: float = NLL_FLOOR,
    callback: Callable[[int, np.ndarray], None] | None = None,
) -> tuple[np.ndarray, TrainingHistory]:
    """Minimize the NLL of ``ts`` over the circuit parameters with CMA-ES.

    The initial mean is uniform in ``[-pi, pi)`` per parameter, drawn from the
    same seeded generator that drives the optimizer. KL to the training
    distribution (and to ``target`` when given) is logged alongside the best
    NLL. ``callback(iteration, best_params)`` runs at each logged iteration.
    """
    ctx = ObjectiveContext(circuit, ts, nll_floor)
    rng = np.random.default_rng(config.seed)
    x0 = rng.uniform(-np.pi, np.pi, size=circuit.n_params)
    p_train = ts.distribution()
    history = TrainingHistory()

    def on_log(iteration: int, best_x: np.ndarray, best_f: float) -> dict:
        probs = probabilities(execute(circuit, best_x))
        history.iterations.append(iteration)
        history.best_nll.append(best_f)
        history.kl_train.append(kl_divergence(p_train, probs, nll_floor))
        history.kl_target.append(None if target is None else kl_divergence(target, probs, nll_floor))
        if callback is not None:
            callback(iteration, best_x)
        return {}

    best, log = cma_es_minimize(
        _batched_nll(ctx),
        circuit.n_params,
        config,
        x0=x0,
        rng=rng,
        vectorized=True,
        on_log=on_log,
    )
    history.warnings = log.warnings
    history.evaluations = log.evaluations
    return best, history


def save_parameters(path: str | Path, circuit: CircuitSpec, params: np.ndarray) -> None:
    """Write the circuit and its parameters as one JSON document."""
    doc = {"circuit": circuit.to_dict(), "params": [float(v) for v in params]}
    Path(path).write_text(json.dumps(doc))


def load_parameters(path: str | Path) -> tuple[CircuitSpec, np.ndarray]:
    doc = json.loads(Path(path).read_text())
    return CircuitSpec.from_dict(doc["circuit"]), np.array(doc["params"], dtype=np.float64)
