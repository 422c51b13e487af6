"""Solution spaces, training sets and costs for the benchmark problems.

Two problems are provided: cardinality-constrained bitstrings (exactly
``k`` ones) and *Evens* (even number of ones). Evens comes with the
negative-separation cost used for quality-based evaluation.
"""

from __future__ import annotations

import json
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from qcbm.statevector import bitstring_to_index, index_to_bitstring

TRAINING_SET_FORMAT_VERSION = 1
ROUNDING_RULES = ("half_up", "floor")


def _popcount(n_bits: int) -> np.ndarray:
    idx = np.arange(1 << n_bits)
    return sum(((idx >> j) & 1) for j in range(n_bits))


@dataclass(frozen=True)
class SolutionSpace:
    """The valid subset of ``{0,1}^n_bits``.

    ``members`` holds sorted basis indices; ``predicate`` is the validity
    test on printed bitstrings.
    """

    kind: str
    n_bits: int
    members: np.ndarray
    predicate: Callable[[str], bool] = field(repr=False, compare=False)
    params: dict = field(default_factory=dict, compare=False)

    @property
    def size(self) -> int:
        return int(self.members.shape[0])

    @property
    def mask(self) -> np.ndarray:
        """Boolean validity table over all ``2**n_bits`` indices."""
        mask = np.zeros(1 << self.n_bits, dtype=bool)
        mask[self.members] = True
        return mask

    def contains(self, bits: str) -> bool:
        return len(bits) == self.n_bits and self.predicate(bits)

    def target_distribution(self) -> np.ndarray:
        """Uniform distribution over the members."""
        p = np.zeros(1 << self.n_bits)
        p[self.members] = 1.0 / self.size
        return p


def cardinality_space(n_bits: int, k: int) -> SolutionSpace:
    """All bitstrings with exactly ``k`` ones."""
    if not 0 <= k <= n_bits:
        raise ValueError(f"k must lie in [0, {n_bits}], got {k}")
    if math.comb(n_bits, k) < 2:
        raise ValueError(f"cardinality space ({n_bits}, {k}) has fewer than two members")
    members = np.flatnonzero(_popcount(n_bits) == k)
    return SolutionSpace(
        "cardinality", n_bits, members, lambda s: s.count("1") == k, {"k": k}
    )


def evens_space(n_bits: int) -> SolutionSpace:
    """All bitstrings with an even number of ones."""
    if n_bits < 2:
        raise ValueError(f"evens space needs at least 2 bits, got {n_bits}")
    members = np.flatnonzero(_popcount(n_bits) % 2 == 0)
    return SolutionSpace("evens", n_bits, members, lambda s: s.count("1") % 2 == 0)


def separation_cost(bits: str) -> int:
    """Negative of the largest gap between consecutive ones.

    Strings with fewer than two ones cost 0.
    """
    ones = [i for i, ch in enumerate(bits) if ch == "1"]
    if len(ones) < 2:
        return 0
    return -max(b - a for a, b in zip(ones, ones[1:]))


@dataclass(frozen=True)
class CostFunction:
    """Integer cost on bitstrings; lower is better."""

    name: str
    fn: Callable[[str], int] = field(repr=False)

    def __call__(self, bits: str) -> int:
        return int(self.fn(bits))

    def table(self, n_bits: int) -> np.ndarray:
        """Cost of every basis index, as an int64 array of length ``2**n_bits``."""
        cache = self.__dict__.setdefault("_tables", {})
        if n_bits not in cache:
            cache[n_bits] = np.array(
                [self.fn(index_to_bitstring(i, n_bits)) for i in range(1 << n_bits)],
                dtype=np.int64,
            )
        return cache[n_bits]


SEPARATION = CostFunction("separation", separation_cost)
COSTS = {"separation": SEPARATION}


@dataclass(frozen=True)
class TrainingSet:
    """Distinct valid samples with a probability weight each.

    ``indices`` are basis indices in ascending order; ``weights`` sum to 1.
    """

    n_bits: int
    indices: np.ndarray
    weights: np.ndarray
    epsilon: float
    kind: str = ""
    seed: int | None = None
    beta: float | None = None

    def __post_init__(self) -> None:
        if self.indices.shape != self.weights.shape:
            raise ValueError("indices and weights must have the same length")
        if np.unique(self.indices).shape[0] != self.indices.shape[0]:
            raise ValueError("training samples must be distinct")

    @property
    def size(self) -> int:
        return int(self.indices.shape[0])

    @property
    def bitstrings(self) -> list[str]:
        return [index_to_bitstring(int(i), self.n_bits) for i in self.indices]

    def distribution(self) -> np.ndarray:
        """Training distribution as a dense table over all basis indices."""
        p = np.zeros(1 << self.n_bits)
        p[self.indices] = self.weights
        return p

    def header(self) -> dict:
        return {
            "format_version": TRAINING_SET_FORMAT_VERSION,
            "n_bits": self.n_bits,
            "epsilon": self.epsilon,
            "kind": self.kind,
            "seed": self.seed,
            "beta": self.beta,
        }

    def save(self, path: str | Path) -> None:
        """Write a JSON header line followed by ``<bitstring> <weight>`` lines."""
        lines = [json.dumps(self.header(), sort_keys=True)]
        lines += [
            f"{index_to_bitstring(int(i), self.n_bits)} {float(w)!r}"
            for i, w in zip(self.indices, self.weights)
        ]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> TrainingSet:
        header_line, *rows = Path(path).read_text().splitlines()
        header = json.loads(header_line)
        if header.get("format_version") != TRAINING_SET_FORMAT_VERSION:
            raise ValueError(f"unsupported training set format {header.get('format_version')!r}")
        indices, weights = [], []
        for row in rows:
            if not row.strip():
                continue
            bits, weight = row.split()
            if len(bits) != header["n_bits"]:
                raise ValueError(f"bitstring {bits!r} does not have {header['n_bits']} bits")
            indices.append(bitstring_to_index(bits))
            weights.append(float(weight))
        return cls(
            n_bits=header["n_bits"],
            indices=np.array(indices, dtype=np.int64),
            weights=np.array(weights, dtype=np.float64),
            epsilon=header["epsilon"],
            kind=header["kind"],
            seed=header["seed"],
            beta=header["beta"],
        )


def training_size(space_size: int, epsilon: float, rounding: str = "half_up") -> int:
    """``D = eps * |S|`` rounded by the given rule."""
    if rounding == "half_up":
        return math.floor(epsilon * space_size + 0.5)
    if rounding == "floor":
        return math.floor(epsilon * space_size)
    raise ValueError(f"unknown rounding rule {rounding!r}; expected one of {ROUNDING_RULES}")


def sample_training_set(
    space: SolutionSpace,
    epsilon: float,
    rng: np.random.Generator,
    rounding: str = "half_up",
    seed: int | None = None,
) -> TrainingSet:
    """Draw ``D`` distinct members uniformly without replacement, uniform weights."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    d = training_size(space.size, epsilon, rounding)
    if d < 1 or d >= space.size:
        raise ValueError(
            f"epsilon={epsilon} gives D={d} for |S|={space.size}; no room for generalization"
        )
    chosen = np.sort(rng.choice(space.members, size=d, replace=False)).astype(np.int64)
    return TrainingSet(
        n_bits=space.n_bits,
        indices=chosen,
        weights=np.full(d, 1.0 / d),
        epsilon=float(epsilon),
        kind=space.kind,
        seed=seed,
    )


def training_costs(ts: TrainingSet, cost: CostFunction) -> np.ndarray:
    return cost.table(ts.n_bits)[ts.indices].astype(np.float64)


def reweight_softmax(ts: TrainingSet, cost: CostFunction, beta: float) -> TrainingSet:
    """Boltzmann weights ``exp(-beta c(x))`` normalized over the training samples."""
    if beta < 0:
        raise ValueError(f"beta must be non-negative, got {beta}")
    logits = -beta * training_costs(ts, cost)
    w = np.exp(logits - logits.max())
    w /= w.sum()
    return TrainingSet(ts.n_bits, ts.indices, w, ts.epsilon, ts.kind, ts.seed, float(beta))


def temperature_from_costs(ts: TrainingSet, cost: CostFunction) -> float:
    """Population standard deviation of the training-set costs.

    ``1/T`` and ``2/T`` are the two reweighting strengths used downstream.
    """
    if ts.size < 2:
        raise ValueError("temperature needs at least two training samples")
    t = float(np.std(training_costs(ts, cost)))
    if t == 0.0:
        raise ValueError("all training costs are equal; reweighting is undefined")
    return t


def make_space(kind: str, n_bits: int, k: int | None = None) -> SolutionSpace:
    if kind == "cardinality":
        if k is None:
            raise ValueError("cardinality dataset needs k")
        return cardinality_space(n_bits, k)
    if kind == "evens":
        return evens_space(n_bits)
    raise ValueError(f"unknown dataset kind {kind!r}")
