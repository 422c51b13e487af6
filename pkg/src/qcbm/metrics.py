"""Validity- and quality-based generalization metrics for generated queries.

Each query is memorized (in the training set), generalized (unseen and
valid) or noise (unseen and invalid). Multiplicities count everywhere
except in ``g_sol_unique``, which counts distinct generalized bitstrings.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from qcbm.datasets import CostFunction, SolutionSpace, TrainingSet
from qcbm.statevector import sample_from_probabilities

METRICS_SCHEMA_VERSION = 1
UTILITY_FRACTION = 0.05


@dataclass(frozen=True)
class QueryBatch:
    """``Q`` generated samples as basis indices (a multiset)."""

    queries: np.ndarray
    n_bits: int

    def __post_init__(self) -> None:
        if self.queries.ndim != 1 or self.queries.shape[0] < 1:
            raise ValueError("a query batch needs at least one query")

    @property
    def q_total(self) -> int:
        return int(self.queries.shape[0])


@dataclass(frozen=True)
class QueryClassification:
    g_train: int
    g_new: int
    g_sol_multi: int
    g_sol_unique: int


@dataclass(frozen=True)
class _Masks:
    seen: np.ndarray
    valid: np.ndarray


def _masks(batch: QueryBatch, ts: TrainingSet, space: SolutionSpace) -> _Masks:
    if not batch.n_bits == ts.n_bits == space.n_bits:
        raise ValueError(
            f"bit widths disagree: queries {batch.n_bits}, training {ts.n_bits}, space {space.n_bits}"
        )
    in_train = np.zeros(1 << batch.n_bits, dtype=bool)
    in_train[ts.indices] = True
    return _Masks(in_train[batch.queries], space.mask[batch.queries])


def classify(batch: QueryBatch, ts: TrainingSet, space: SolutionSpace) -> QueryClassification:
    m = _masks(batch, ts, space)
    unseen_valid = ~m.seen & m.valid
    g_train = int(m.seen.sum())
    return QueryClassification(
        g_train=g_train,
        g_new=batch.q_total - g_train,
        g_sol_multi=int(unseen_valid.sum()),
        g_sol_unique=int(np.unique(batch.queries[unseen_valid]).shape[0]),
    )


def fidelity(c: QueryClassification) -> float | None:
    """Share of unseen queries that are valid; ``None`` if nothing unseen was generated."""
    if c.g_new == 0:
        return None
    return c.g_sol_multi / c.g_new


def rate(c: QueryClassification, q: int) -> float:
    return c.g_sol_multi / q


def expected_rate(epsilon: float) -> float:
    return 1.0 - epsilon


def rate_normalized(r: float, epsilon: float) -> float:
    return r / expected_rate(epsilon)


def coverage(c: QueryClassification, space_size: int, d: int) -> float:
    if space_size <= d:
        raise ValueError("coverage needs at least one unseen solution")
    return c.g_sol_unique / (space_size - d)


def expected_coverage(space_size: int, epsilon: float, q: int) -> float:
    """Coverage of a perfect model after ``q`` queries."""
    unseen = space_size * (1.0 - epsilon)
    if unseen <= 0:
        raise ValueError("expected coverage needs a non-empty unseen solution set")
    if unseen <= 1.0:
        return 1.0 - (1.0 - 1.0 / unseen) ** q
    # 1 - (1 - 1/unseen)^q, computed without cancellation for large unseen
    return -math.expm1(q * math.log1p(-1.0 / unseen))


def coverage_normalized(cov: float, space_size: int, epsilon: float, q: int) -> float:
    return cov / expected_coverage(space_size, epsilon, q)


def coverage_asymptotic(c: QueryClassification, q: int) -> float:
    """Normalized coverage in the ``Q << |S|(1-eps)`` regime; needs no ``|S|``."""
    return c.g_sol_unique / q


def precision(c: QueryClassification, q: int) -> float:
    return (c.g_train + c.g_sol_multi) / q


def exploration(c: QueryClassification, q: int) -> float:
    return c.g_new / q


def utility_from_costs(costs: np.ndarray) -> float | None:
    """Mean of the lowest ``ceil(5%)`` costs (at least one), multiplicity counted."""
    costs = np.asarray(costs)
    n = costs.shape[0]
    if n == 0:
        return None
    k = max(1, math.ceil(UTILITY_FRACTION * n))
    return float(np.mean(np.sort(costs, kind="stable")[:k]))


def utility(unseen_valid_queries: np.ndarray, cost: CostFunction, n_bits: int) -> float | None:
    return utility_from_costs(cost.table(n_bits)[np.asarray(unseen_valid_queries, dtype=np.int64)])


def tail_probability(queries: np.ndarray, cost: CostFunction, n_bits: int, threshold: float) -> float | None:
    """Fraction of ``queries`` whose cost is strictly below ``threshold``."""
    queries = np.asarray(queries, dtype=np.int64)
    if queries.shape[0] == 0:
        return None
    return float(np.mean(cost.table(n_bits)[queries] < threshold))


@dataclass(frozen=True)
class MetricsReport:
    """All metrics for one query batch. Absent values are ``None``."""

    F: float | None
    R: float
    R_norm: float
    C: float
    C_norm: float
    C_norm_asymptotic: float
    p: float
    E: float
    U: float | None
    tail_prob: float | None
    raw: QueryClassification
    q_total: int
    space_size: int
    d: int
    epsilon: float
    flags: tuple[str, ...] = field(default_factory=tuple)

    FIELDS = (
        "F", "R", "R_norm", "C", "C_norm", "C_norm_asymptotic", "p", "E", "U", "tail_prob",
        "g_train", "g_new", "g_sol_multi", "g_sol_unique", "q_total", "space_size", "d",
        "epsilon", "flags",
    )

    @property
    def combined_score(self) -> float | None:
        """``F + R_norm + C_norm``, used to pick the median run."""
        if self.F is None:
            return None
        return self.F + self.R_norm + self.C_norm

    def to_dict(self) -> dict:
        d = asdict(self)
        raw = d.pop("raw")
        d.update(raw)
        d["flags"] = ";".join(self.flags)
        return {k: d[k] for k in self.FIELDS}

    def to_json(self) -> str:
        return json.dumps({"schema_version": METRICS_SCHEMA_VERSION, **self.to_dict()})

    def to_csv_row(self, header: bool = False) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        if header:
            writer.writerow(self.FIELDS)
        writer.writerow(_csv_value(v) for v in self.to_dict().values())
        return buf.getvalue()

    @classmethod
    def from_dict(cls, d: dict) -> MetricsReport:
        def opt(v):
            return None if v in (None, "") else float(v)

        raw = QueryClassification(*(int(d[k]) for k in ("g_train", "g_new", "g_sol_multi", "g_sol_unique")))
        flags = d.get("flags") or ""
        return cls(
            F=opt(d["F"]), R=float(d["R"]), R_norm=float(d["R_norm"]), C=float(d["C"]),
            C_norm=float(d["C_norm"]), C_norm_asymptotic=float(d["C_norm_asymptotic"]),
            p=float(d["p"]), E=float(d["E"]), U=opt(d["U"]), tail_prob=opt(d["tail_prob"]),
            raw=raw, q_total=int(d["q_total"]), space_size=int(d["space_size"]), d=int(d["d"]),
            epsilon=float(d["epsilon"]), flags=tuple(f for f in flags.split(";") if f),
        )


def _csv_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def evaluate(
    batch: QueryBatch,
    ts: TrainingSet,
    space: SolutionSpace,
    cost: CostFunction | None = None,
    tail_threshold: float | None = None,
    tail_denominator: str = "valid",
) -> MetricsReport:
    """Compute the full report for one batch.

    ``tail_denominator`` picks the population for the tail probability:
    ``"valid"`` (every valid query, seen or unseen) or ``"unseen_valid"``.
    """
    c = classify(batch, ts, space)
    q = batch.q_total
    eps = ts.epsilon
    r = rate(c, q)
    cov = coverage(c, space.size, ts.size)
    report_u = tail = None
    if cost is not None:
        m = _masks(batch, ts, space)
        unseen_valid = batch.queries[~m.seen & m.valid]
        report_u = utility(unseen_valid, cost, batch.n_bits)
        if tail_threshold is not None:
            if tail_denominator == "valid":
                pool = batch.queries[m.valid]
            elif tail_denominator == "unseen_valid":
                pool = unseen_valid
            else:
                raise ValueError(f"unknown tail denominator {tail_denominator!r}")
            tail = tail_probability(pool, cost, batch.n_bits, tail_threshold)
    r_norm = rate_normalized(r, eps)
    c_norm = coverage_normalized(cov, space.size, eps, q)
    flags = []
    if fidelity(c) is None:
        flags.append("F_absent:no unseen queries")
    if r_norm > 1:
        flags.append("R_norm>1")
    if c_norm > 1:
        flags.append("C_norm>1")
    return MetricsReport(
        F=fidelity(c),
        R=r,
        R_norm=r_norm,
        C=cov,
        C_norm=c_norm,
        C_norm_asymptotic=coverage_asymptotic(c, q),
        p=precision(c, q),
        E=exploration(c, q),
        U=report_u,
        tail_prob=tail,
        raw=c,
        q_total=q,
        space_size=space.size,
        d=ts.size,
        epsilon=eps,
        flags=tuple(flags),
    )


SUMMARY_METRICS = ("F", "R", "R_norm", "C", "C_norm", "C_norm_asymptotic", "p", "E", "U", "tail_prob")


def mean_and_stderr(values: list[float | None]) -> tuple[float | None, float | None, int]:
    """Mean and ``std / sqrt(n)`` over present values, plus how many were absent.

    The standard deviation uses ``n - 1`` degrees of freedom; a single value
    has zero error.
    """
    present = [v for v in values if v is not None]
    absent = len(values) - len(present)
    if not present:
        return None, None, absent
    arr = np.array(present, dtype=np.float64)
    if arr.shape[0] == 1:
        return float(arr[0]), 0.0, absent
    return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(arr.shape[0])), absent


@dataclass
class BaselineSummary:
    reports: list[MetricsReport]
    mean: dict[str, float | None]
    stderr: dict[str, float | None]
    absent: dict[str, int]


def summarize(reports: list[MetricsReport]) -> BaselineSummary:
    mean, err, absent = {}, {}, {}
    for name in SUMMARY_METRICS:
        mean[name], err[name], absent[name] = mean_and_stderr([getattr(r, name) for r in reports])
    return BaselineSummary(reports, mean, err, absent)


def random_baseline(
    space: SolutionSpace,
    ts: TrainingSet,
    q: int,
    runs: int,
    rng: np.random.Generator,
    cost: CostFunction | None = None,
    tail_threshold: float | None = None,
) -> BaselineSummary:
    """Metrics of uniformly random bitstrings, averaged over ``runs`` batches."""
    if runs < 1:
        raise ValueError("runs must be at least 1")
    n = space.n_bits
    reports = [
        evaluate(QueryBatch(rng.integers(0, 1 << n, size=q), n), ts, space, cost, tail_threshold)
        for _ in range(runs)
    ]
    return summarize(reports)


def median_run_index(reports: list[MetricsReport]) -> int:
    """Index of the report with median ``F + R_norm + C_norm``.

    Reports without a fidelity are skipped. For an even count the lower
    middle score is used; among equal scores the lowest index wins.
    """
    scored = [(r.combined_score, i) for i, r in enumerate(reports) if r.combined_score is not None]
    if not scored:
        raise ValueError("no report has a defined fidelity")
    scored.sort()
    median_score = scored[(len(scored) - 1) // 2][0]
    return min(i for s, i in scored if s == median_score)


def select_median_run(reports: list[MetricsReport]) -> MetricsReport:
    return reports[median_run_index(reports)]


def generate_queries(probs: np.ndarray, q: int, n_bits: int, rng: np.random.Generator) -> QueryBatch:
    return QueryBatch(sample_from_probabilities(probs, q, rng), n_bits)
