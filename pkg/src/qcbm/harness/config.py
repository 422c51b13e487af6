"""Versioned JSON experiment configuration.

Schema (version 1)::

    {
      "schema_version": 1,
      "name": "depth-sweep",
      "dataset": {"kind": "cardinality", "n_bits": 12, "k": 6},
      "cost": null,                 # or "separation"
      "tail_threshold": null,       # P(c < t) threshold, needs a cost
      "topology": "line",           # or "all_to_all"
      "layers": [2, 4, 8, 16],
      "epsilons": [0.3],
      "beta_modes": ["none"],       # none | beta1 (1/T) | beta2 (2/T)
      "seeds": 5,
      "rounding": "half_up",        # or "floor"
      "trainer": {"max_iterations": 10000, "population_size": null,
                  "initial_step": 0.2, "convergence_threshold": null,
                  "log_every": 10},
      "queries": 10000,
      "eval_every": 250,            # 0 disables metrics during training
      "baseline_runs": 5,
      "master_seed": 0,
      "output_dir": "results/depth-sweep",
      "parallelism": 1
    }

Omitted keys take the defaults above; unknown keys are rejected.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from qcbm.ansatz import Topology, param_count
from qcbm.cmaes import CMAConfig
from qcbm.datasets import COSTS, ROUNDING_RULES, make_space, training_size
from qcbm.statevector import MAX_QUBITS

CONFIG_SCHEMA_VERSION = 1
OUTPUT_ROOT_ENV = "QCBM_OUTPUT_ROOT"

# Reweighting strength as a multiple of 1/T.
BETA_MODES = {"none": 0.0, "beta1": 1.0, "beta2": 2.0}


class ConfigError(ValueError):
    """Invalid or unreadable experiment configuration."""


@dataclass(frozen=True)
class DatasetConfig:
    kind: str
    n_bits: int
    k: int | None = None


@dataclass(frozen=True)
class TrainerSettings:
    max_iterations: int = 10_000
    population_size: int | None = None
    initial_step: float = 0.2
    convergence_threshold: float | None = None
    log_every: int = 10

    def to_trainer_config(self, seed: int) -> CMAConfig:
        return CMAConfig(seed=seed, **asdict(self))


@dataclass(frozen=True)
class Cell:
    """One ``(L, eps, beta mode)`` combination; seeds repeat inside it."""

    layers: int
    epsilon: float
    beta_mode: str

    @property
    def cell_id(self) -> str:
        return f"L{self.layers}-eps{self.epsilon!r}-{self.beta_mode}"


@dataclass(frozen=True)
class RunSpec:
    cell: Cell
    seed_index: int

    @property
    def run_id(self) -> str:
        return f"{self.cell.cell_id}-s{self.seed_index}"


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    dataset: DatasetConfig
    topology: str = "line"
    layers: tuple[int, ...] = (2,)
    epsilons: tuple[float, ...] = (0.3,)
    beta_modes: tuple[str, ...] = ("none",)
    seeds: int = 5
    rounding: str = "half_up"
    cost: str | None = None
    tail_threshold: float | None = None
    trainer: TrainerSettings = field(default_factory=TrainerSettings)
    queries: int = 10_000
    eval_every: int = 250
    baseline_runs: int = 5
    master_seed: int = 0
    output_dir: str = "results"
    parallelism: int = 1

    def __post_init__(self) -> None:
        try:
            self._validate()
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    def _validate(self) -> None:
        ds = self.dataset
        if not 1 <= ds.n_bits <= MAX_QUBITS:
            raise ConfigError(f"dataset.n_bits must be in [1, {MAX_QUBITS}], got {ds.n_bits}")
        space = make_space(ds.kind, ds.n_bits, ds.k)
        if self.topology not in {t.value for t in Topology}:
            raise ConfigError(f"unknown topology {self.topology!r}")
        if not self.layers:
            raise ConfigError("layers must not be empty")
        for L in self.layers:
            param_count(ds.n_bits, L, self.topology)
        if self.rounding not in ROUNDING_RULES:
            raise ConfigError(f"unknown rounding {self.rounding!r}; expected one of {ROUNDING_RULES}")
        if not self.epsilons:
            raise ConfigError("epsilons must not be empty")
        for eps in self.epsilons:
            if not 0.0 < eps < 1.0:
                raise ConfigError(f"epsilon must lie in (0, 1), got {eps}")
            d = training_size(space.size, eps, self.rounding)
            if not 1 <= d < space.size:
                raise ConfigError(f"epsilon={eps} gives D={d} for |S|={space.size}")
        if not self.beta_modes:
            raise ConfigError("beta_modes must not be empty")
        for mode in self.beta_modes:
            if mode not in BETA_MODES:
                raise ConfigError(f"unknown beta mode {mode!r}; expected one of {sorted(BETA_MODES)}")
        if self.cost is not None and self.cost not in COSTS:
            raise ConfigError(f"unknown cost {self.cost!r}; expected one of {sorted(COSTS)}")
        if self.cost is None and any(m != "none" for m in self.beta_modes):
            raise ConfigError("reweighted beta modes need a cost function")
        if self.cost is None and self.tail_threshold is not None:
            raise ConfigError("tail_threshold needs a cost function")
        for key in ("layers", "epsilons", "beta_modes"):
            values = getattr(self, key)
            if len(set(values)) != len(values):
                raise ConfigError(f"{key} has duplicate entries")
        for key, lo in (("seeds", 1), ("queries", 1), ("baseline_runs", 1), ("parallelism", 1), ("eval_every", 0)):
            if getattr(self, key) < lo:
                raise ConfigError(f"{key} must be at least {lo}, got {getattr(self, key)}")
        self.trainer.to_trainer_config(0)

    @property
    def beta_factors(self) -> dict[str, float]:
        return {m: BETA_MODES[m] for m in self.beta_modes}

    def cells(self) -> list[Cell]:
        return [
            Cell(L, float(eps), mode)
            for L in self.layers
            for eps in self.epsilons
            for mode in self.beta_modes
        ]

    def runs(self) -> list[RunSpec]:
        return [RunSpec(c, s) for c in self.cells() for s in range(self.seeds)]

    def resolved_output_dir(self) -> Path:
        """``output_dir``, placed under ``$QCBM_OUTPUT_ROOT`` when it is relative."""
        path = Path(self.output_dir)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not path.is_absolute():
            return Path(root) / path
        return path

    def with_overrides(
        self,
        master_seed: int | None = None,
        parallelism: int | None = None,
        max_iterations: int | None = None,
        output_dir: str | None = None,
    ) -> ExperimentConfig:
        cfg = self
        if master_seed is not None:
            cfg = replace(cfg, master_seed=master_seed)
        if parallelism is not None:
            cfg = replace(cfg, parallelism=parallelism)
        if max_iterations is not None:
            cfg = replace(cfg, trainer=replace(cfg.trainer, max_iterations=max_iterations))
        if output_dir is not None:
            cfg = replace(cfg, output_dir=output_dir)
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("layers", "epsilons", "beta_modes"):
            d[key] = list(d[key])
        return {"schema_version": CONFIG_SCHEMA_VERSION, **d}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        d = dict(d)
        version = d.pop("schema_version", None)
        if version != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema_version {version!r}; expected {CONFIG_SCHEMA_VERSION}")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "name" not in d or "dataset" not in d:
            raise ConfigError("config needs 'name' and 'dataset'")
        try:
            d["dataset"] = _sub(DatasetConfig, d["dataset"], "dataset")
            if "trainer" in d:
                d["trainer"] = _sub(TrainerSettings, d["trainer"], "trainer")
            for key in ("layers", "epsilons", "beta_modes"):
                if key in d:
                    d[key] = tuple(d[key])
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> ExperimentConfig:
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_json(text)


def _sub(kind, value, name):
    if not isinstance(value, dict):
        raise ConfigError(f"{name} must be a JSON object")
    known = {f.name for f in fields(kind)}
    unknown = sorted(set(value) - known)
    if unknown:
        raise ConfigError(f"unknown {name} keys: {', '.join(unknown)}")
    return kind(**value)
