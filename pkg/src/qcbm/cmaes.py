"""A self-contained (mu/mu_w, lambda)-CMA-ES.

Strategy parameters follow Hansen's tutorial defaults. The eigendecomposition
of the covariance is refreshed lazily, roughly every
``1 / (10 n (c1 + cmu))`` generations, which keeps high-dimensional runs
(a few hundred parameters) cheap.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np


def default_population_size(dim: int) -> int:
    return 4 + int(3 * math.log(dim))


@dataclass
class CMAParameters:
    """Static strategy parameters for dimension ``dim`` and population ``lam``."""

    dim: int
    lam: int
    mu: int = field(init=False)
    weights: np.ndarray = field(init=False, repr=False)
    mueff: float = field(init=False)
    cc: float = field(init=False)
    cs: float = field(init=False)
    c1: float = field(init=False)
    cmu: float = field(init=False)
    damps: float = field(init=False)
    chi_n: float = field(init=False)

    def __post_init__(self) -> None:
        n, lam = self.dim, self.lam
        self.mu = lam // 2
        w = math.log(self.mu + 0.5) - np.log(np.arange(1, self.mu + 1))
        self.weights = w / w.sum()
        self.mueff = 1.0 / float(np.sum(self.weights**2))
        self.cc = (4 + self.mueff / n) / (n + 4 + 2 * self.mueff / n)
        self.cs = (self.mueff + 2) / (n + self.mueff + 5)
        self.c1 = 2 / ((n + 1.3) ** 2 + self.mueff)
        self.cmu = min(
            1 - self.c1,
            2 * (self.mueff - 2 + 1 / self.mueff) / ((n + 2) ** 2 + self.mueff),
        )
        self.damps = 1 + 2 * max(0.0, math.sqrt((self.mueff - 1) / (n + 1)) - 1) + self.cs
        self.chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n**2))


class CMAES:
    """Ask/tell CMA-ES state.

    Parameters
    ----------
    mean:
        Initial distribution mean.
    sigma:
        Initial step size.
    rng:
        Source of all randomness; the run is a pure function of its state.
    popsize:
        Number of candidates per generation (``lambda``).
    """

    def __init__(self, mean: np.ndarray, sigma: float, rng: np.random.Generator, popsize: int | None = None):
        self.mean = np.array(mean, dtype=np.float64)
        self.dim = self.mean.shape[0]
        if self.dim < 1:
            raise ValueError("dimension must be at least 1")
        if sigma <= 0:
            raise ValueError(f"initial step size must be positive, got {sigma}")
        lam = popsize if popsize is not None else default_population_size(self.dim)
        if lam < 4:
            raise ValueError(f"population size must be at least 4, got {lam}")
        self.params = CMAParameters(self.dim, lam)
        self.sigma = float(sigma)
        self.rng = rng
        n = self.dim
        self.pc = np.zeros(n)
        self.ps = np.zeros(n)
        self.C = np.eye(n)
        self.B = np.eye(n)
        self.D = np.ones(n)
        self.inv_sqrt_C = np.eye(n)
        self.generation = 0
        self._eigen_generation = 0
        self.warnings: list[str] = []
        self._y: np.ndarray | None = None

    @property
    def popsize(self) -> int:
        return self.params.lam

    def ask(self) -> np.ndarray:
        """Sample ``lambda`` candidates from ``N(mean, sigma^2 C)``, one per row."""
        z = self.rng.standard_normal((self.params.lam, self.dim))
        self._y = (z * self.D) @ self.B.T
        return self.mean + self.sigma * self._y

    def tell(self, candidates: np.ndarray, values: np.ndarray) -> None:
        """Update the distribution from finite objective values of the last ``ask``."""
        p = self.params
        if self._y is None:
            raise RuntimeError("tell() called without a preceding ask()")
        values = np.asarray(values, dtype=np.float64)
        # Stable sort: equal values keep candidate order, so ties are deterministic.
        order = np.argsort(values, kind="stable")
        y_sel = self._y[order[: p.mu]]
        self._y = None

        y_w = p.weights @ y_sel
        self.mean = self.mean + self.sigma * y_w
        self.generation += 1

        self.ps = (1 - p.cs) * self.ps + math.sqrt(p.cs * (2 - p.cs) * p.mueff) * (self.inv_sqrt_C @ y_w)
        ps_norm = float(np.linalg.norm(self.ps))
        hsig = ps_norm / math.sqrt(1 - (1 - p.cs) ** (2 * self.generation)) / p.chi_n < 1.4 + 2 / (self.dim + 1)
        self.pc = (1 - p.cc) * self.pc + hsig * math.sqrt(p.cc * (2 - p.cc) * p.mueff) * y_w

        c1a = p.c1 * (1 - (1 - hsig) * p.cc * (2 - p.cc))
        rank_mu = (y_sel.T * p.weights) @ y_sel
        self.C = (1 - c1a - p.cmu) * self.C + p.c1 * np.outer(self.pc, self.pc) + p.cmu * rank_mu

        self.sigma *= math.exp((p.cs / p.damps) * (ps_norm / p.chi_n - 1))

        lazy_gap = 1.0 / ((p.c1 + p.cmu) * self.dim * 10)
        if self.generation - self._eigen_generation > lazy_gap:
            self._update_eigensystem()

    def _update_eigensystem(self) -> None:
        self._eigen_generation = self.generation
        self.C = np.triu(self.C) + np.triu(self.C, 1).T
        eigvals, eigvecs = np.linalg.eigh(self.C)
        if not np.all(np.isfinite(eigvals)) or eigvals.min() <= 0:
            self.warnings.append(
                f"generation {self.generation}: covariance not positive definite "
                f"(min eigenvalue {eigvals.min():.3e}); reset to identity"
            )
            self.C = np.eye(self.dim)
            self.pc = np.zeros(self.dim)
            eigvals, eigvecs = np.ones(self.dim), np.eye(self.dim)
        self.D = np.sqrt(eigvals)
        self.B = eigvecs
        self.inv_sqrt_C = (eigvecs / self.D) @ eigvecs.T


@dataclass
class CMAConfig:
    """Optimizer settings shared by :func:`cma_es_minimize` and the trainer."""

    max_iterations: int = 10_000
    population_size: int | None = None
    initial_step: float = 0.2
    seed: int = 0
    convergence_threshold: float | None = None
    log_every: int = 10

    def __post_init__(self) -> None:
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")
        if self.population_size is not None and self.population_size < 4:
            raise ValueError("population_size must be at least 4")
        if self.initial_step <= 0:
            raise ValueError("initial_step must be positive")
        if self.log_every < 1:
            raise ValueError("log_every must be at least 1")


@dataclass
class OptimizationLog:
    """Best-so-far objective at each logged iteration, plus optimizer warnings."""

    iterations: list[int] = field(default_factory=list)
    best_values: list[float] = field(default_factory=list)
    extras: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    evaluations: int = 0


class _Penalizer:
    """Replaces non-finite objective values by ``worst + 10 * range`` of finite ones seen."""

    def __init__(self) -> None:
        self.lo = math.inf
        self.hi = -math.inf
        self.count = 0

    def __call__(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        finite = np.isfinite(values)
        if finite.any():
            self.lo = min(self.lo, float(values[finite].min()))
            self.hi = max(self.hi, float(values[finite].max()))
        if finite.all():
            return values
        self.count += int((~finite).sum())
        if math.isfinite(self.hi):
            spread = self.hi - self.lo
            penalty = self.hi + 10 * spread if spread > 0 else self.hi + 1.0
        else:
            penalty = 1e100
        return np.where(finite, values, penalty)


def cma_es_minimize(
    objective: Callable[[np.ndarray], float | np.ndarray],
    dim: int,
    config: CMAConfig,
    x0: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
    vectorized: bool = False,
    on_log: Callable[[int, np.ndarray, float], dict] | None = None,
) -> tuple[np.ndarray, OptimizationLog]:
    """Minimize ``objective`` and return the best parameters ever evaluated.

    ``objective`` maps one parameter vector to a float, or, with
    ``vectorized=True``, a ``(lambda, dim)`` array to ``lambda`` values.
    The initial mean (``x0``, default zeros) is evaluated first and logged as
    iteration 0. Logging happens every ``config.log_every`` iterations and at
    the last one; ``on_log(iteration, best_x, best_f)`` may return extra
    columns to store with the record.
    """
    if dim < 1:
        raise ValueError("dim must be at least 1")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    x0 = np.zeros(dim) if x0 is None else np.asarray(x0, dtype=np.float64)
    if x0.shape != (dim,):
        raise ValueError(f"x0 has shape {x0.shape}, expected ({dim},)")

    def evaluate(xs: np.ndarray) -> np.ndarray:
        if vectorized:
            return np.asarray(objective(xs), dtype=np.float64).reshape(xs.shape[0])
        return np.array([objective(x) for x in xs], dtype=np.float64)

    log = OptimizationLog()
    penalize = _Penalizer()

    f0 = penalize(evaluate(x0[None, :]))[0]
    log.evaluations += 1
    best_x, best_f = x0.copy(), float(f0)

    def record(iteration: int) -> None:
        log.iterations.append(iteration)
        log.best_values.append(best_f)
        log.extras.append(on_log(iteration, best_x, best_f) if on_log else {})

    record(0)
    es = CMAES(x0, config.initial_step, rng, config.population_size)
    threshold = config.convergence_threshold
    iteration = 0
    while iteration < config.max_iterations:
        if threshold is not None and best_f <= threshold:
            break
        xs = es.ask()
        fs = penalize(evaluate(xs))
        log.evaluations += xs.shape[0]
        es.tell(xs, fs)
        iteration += 1
        k = int(np.argmin(fs))
        if fs[k] < best_f:
            best_f, best_x = float(fs[k]), xs[k].copy()
        if iteration % config.log_every == 0:
            record(iteration)
    if log.iterations[-1] != iteration:
        record(iteration)
    log.warnings.extend(es.warnings)
    if penalize.count:
        log.warnings.append(f"{penalize.count} non-finite objective values penalized")
    return best_x, log
