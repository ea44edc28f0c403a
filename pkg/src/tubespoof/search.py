from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator

import numpy as np

from .acoustics import DEFAULT_Q_DECAY
from .run_log import RunLog, log_event

SINGLE_TUBE = "single"
TWO_TUBE = "two"
MODES = (SINGLE_TUBE, TWO_TUBE)
STRATEGIES = ("printed", "best2")
GRID_DECIMALS = 10

Fitness = Callable[[np.ndarray], float]


@dataclass(frozen=True)
class Axis:
    name: str
    low: float
    high: float
    step: float

    def __post_init__(self) -> None:
        if self.step <= 0 or self.high < self.low:
            raise ValueError(f"Axis {self.name} needs low <= high and a positive step.")
        count = (self.high - self.low) / self.step
        if abs(count - round(count)) > 1e-9:
            raise ValueError(f"Step {self.step} does not divide the range of axis {self.name}.")

    def values(self) -> np.ndarray:
        count = int(round((self.high - self.low) / self.step)) + 1
        return np.round(self.low + self.step * np.arange(count), GRID_DECIMALS)

    def to_dict(self) -> dict[str, float]:
        return {"low": self.low, "high": self.high, "step": self.step}


def _axis(name: str, data: dict[str, Any], default: tuple[float, float, float]) -> Axis:
    low, high, step = default
    return Axis(
        name,
        float(data.get("low", low)),
        float(data.get("high", high)),
        float(data.get("step", step)),
    )


DEFAULT_F0 = (50.0, 1000.0, 10.0)
DEFAULT_Q0 = (5.0, 100.0, 5.0)
DEFAULT_LENGTH = (0.05, 1.20, 0.05)
DEFAULT_RATIO = (1.0, 10.0, 1.0)
DEFAULT_D1 = 0.021


@dataclass(frozen=True)
class SearchSpace:
    """Rectangular, gridded parameter space for the tube search.

    Single-tube coordinates are (f0 Hz, Q0); two-tube coordinates are
    (L1 m, L2 m, area ratio) with the first bore fixed at ``d1_m``.
    """

    mode: str = SINGLE_TUBE
    f0: Axis = field(default_factory=lambda: Axis("f0_hz", *DEFAULT_F0))
    q0: Axis = field(default_factory=lambda: Axis("q0", *DEFAULT_Q0))
    l1: Axis = field(default_factory=lambda: Axis("l1_m", *DEFAULT_LENGTH))
    l2: Axis = field(default_factory=lambda: Axis("l2_m", *DEFAULT_LENGTH))
    area_ratio: Axis = field(default_factory=lambda: Axis("area_ratio", *DEFAULT_RATIO))
    d1_m: float = DEFAULT_D1
    q_decay_exponent: float = DEFAULT_Q_DECAY

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"Unknown search mode {self.mode!r}; expected one of {MODES}.")
        if self.d1_m <= 0:
            raise ValueError("d1_m must be positive.")
        if self.q_decay_exponent <= 0:
            raise ValueError("q_decay_exponent must be positive.")

    @property
    def axes(self) -> tuple[Axis, ...]:
        if self.mode == SINGLE_TUBE:
            return (self.f0, self.q0)
        return (self.l1, self.l2, self.area_ratio)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(axis.name for axis in self.axes)

    @property
    def lower(self) -> np.ndarray:
        return np.array([axis.low for axis in self.axes])

    @property
    def upper(self) -> np.ndarray:
        return np.array([axis.high for axis in self.axes])

    @property
    def steps(self) -> np.ndarray:
        return np.array([axis.step for axis in self.axes])

    def snap(self, point: Any) -> np.ndarray:
        values = np.asarray(point, dtype=np.float64)
        indices = np.round((values - self.lower) / self.steps)
        snapped = np.clip(self.lower + indices * self.steps, self.lower, self.upper)
        return np.round(snapped, GRID_DECIMALS)

    def contains(self, point: Any) -> bool:
        values = np.asarray(point, dtype=np.float64)
        if values.shape != self.lower.shape:
            return False
        if np.any(values < self.lower - 1e-9) or np.any(values > self.upper + 1e-9):
            return False
        return bool(np.allclose(self.snap(values), values, rtol=0.0, atol=1e-9))

    def grid_points(self) -> Iterator[np.ndarray]:
        for combo in itertools.product(*(axis.values() for axis in self.axes)):
            yield np.array(combo)

    def grid_size(self) -> int:
        return int(np.prod([axis.values().size for axis in self.axes]))

    def named(self, point: Any) -> dict[str, float]:
        return {name: float(value) for name, value in zip(self.names, point)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SearchSpace":
        return cls(
            mode=str(data.get("mode", SINGLE_TUBE)),
            f0=_axis("f0_hz", data.get("f0_hz", {}), DEFAULT_F0),
            q0=_axis("q0", data.get("q0", {}), DEFAULT_Q0),
            l1=_axis("l1_m", data.get("l1_m", {}), DEFAULT_LENGTH),
            l2=_axis("l2_m", data.get("l2_m", {}), DEFAULT_LENGTH),
            area_ratio=_axis("area_ratio", data.get("area_ratio", {}), DEFAULT_RATIO),
            d1_m=float(data.get("d1_m", DEFAULT_D1)),
            q_decay_exponent=float(data.get("q_decay_exponent", DEFAULT_Q_DECAY)),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "f0_hz": self.f0.to_dict(),
            "q0": self.q0.to_dict(),
            "l1_m": self.l1.to_dict(),
            "l2_m": self.l2.to_dict(),
            "area_ratio": self.area_ratio.to_dict(),
            "d1_m": self.d1_m,
            "q_decay_exponent": self.q_decay_exponent,
        }


@dataclass(frozen=True)
class DEConfig:
    population: int = 100
    max_iterations: int = 5
    tolerance: float = 0.001
    crossover: float = 0.7
    mutation: float = 0.8
    seed: int = 0
    strategy: str = "printed"
    max_evaluations: int | None = None

    def __post_init__(self) -> None:
        if self.population < 5:
            raise ValueError("DE population must be at least 5.")
        if not 0 < self.crossover <= 1:
            raise ValueError("Crossover probability must lie in (0, 1].")
        if not 0 < self.mutation < 2:
            raise ValueError("Mutation factor must lie in (0, 2).")
        if self.max_iterations < 0:
            raise ValueError("max_iterations cannot be negative.")
        if self.tolerance < 0:
            raise ValueError("Tolerance cannot be negative.")
        if self.strategy not in STRATEGIES:
            raise ValueError(
                f"Unknown DE strategy {self.strategy!r}; expected one of {STRATEGIES}."
            )
        if self.max_evaluations is not None and self.max_evaluations < 0:
            raise ValueError("max_evaluations cannot be negative.")
        if self.seed < 0:
            raise ValueError("Seed must be non-negative.")

    def with_overrides(self, **changes: Any) -> "DEConfig":
        data = self.to_dict()
        data.update({key: value for key, value in changes.items() if value is not None})
        return DEConfig.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DEConfig":
        budget = data.get("max_evaluations")
        return cls(
            population=int(data.get("population", 100)),
            max_iterations=int(data.get("max_iterations", 5)),
            tolerance=float(data.get("tolerance", 0.001)),
            crossover=float(data.get("crossover", 0.7)),
            mutation=float(data.get("mutation", 0.8)),
            seed=int(data.get("seed", 0)),
            strategy=str(data.get("strategy", "printed")),
            max_evaluations=int(budget) if budget is not None else None,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "population": self.population,
            "max_iterations": self.max_iterations,
            "tolerance": self.tolerance,
            "crossover": self.crossover,
            "mutation": self.mutation,
            "seed": self.seed,
            "strategy": self.strategy,
            "max_evaluations": self.max_evaluations,
        }


@dataclass(frozen=True, eq=False)
class SearchResult:
    best_params: np.ndarray
    best_fitness: float
    trace: tuple[float, ...]
    evaluations: int
    generations: int
    converged: bool


class _Evaluator:
    """Runs fitness on snapped points and keeps the evaluation count."""

    def __init__(self, fitness: Fitness, space: SearchSpace, budget: int | None, jobs: int) -> None:
        self.fitness = fitness
        self.space = space
        self.budget = budget
        self.jobs = max(1, int(jobs))
        self.count = 0

    def remaining(self) -> int | None:
        if self.budget is None:
            return None
        return max(0, self.budget - self.count)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        snapped = [self.space.snap(point) for point in points]
        self.count += len(snapped)
        if self.jobs > 1 and len(snapped) > 1:
            with ThreadPoolExecutor(max_workers=self.jobs) as pool:
                values = list(pool.map(self.fitness, snapped))
        else:
            values = [self.fitness(point) for point in snapped]
        return np.array(values, dtype=np.float64)


def _distinct(rng: np.random.Generator, size: int, count: int, exclude: int) -> np.ndarray:
    choices = rng.choice(size - 1, size=count, replace=False)
    return np.where(choices >= exclude, choices + 1, choices)


def differential_evolution(
    fitness: Fitness,
    space: SearchSpace,
    cfg: DEConfig,
    *,
    initial_population: np.ndarray | None = None,
    jobs: int = 1,
    log: RunLog | None = None,
) -> SearchResult:
    """Maximize ``fitness`` over the gridded ``space``.

    Every generation mutates around the incumbent best, ``best + m*(r1 - r2)``
    (``best2`` adds a second difference pair), applies binomial crossover with
    one coordinate always taken from the mutant, and keeps a trial only when it
    scores strictly higher. All random draws for a generation happen before any
    fitness call, so parallel evaluation never touches the RNG.
    """

    rng = np.random.default_rng(cfg.seed)
    lower, upper = space.lower, space.upper
    size, dims = cfg.population, lower.size
    if initial_population is None:
        population = rng.uniform(lower, upper, size=(size, dims))
    else:
        population = np.clip(np.array(initial_population, dtype=np.float64), lower, upper)
        if population.shape != (size, dims):
            raise ValueError(f"Initial population must have shape {(size, dims)}.")

    evaluate = _Evaluator(fitness, space, cfg.max_evaluations, jobs)
    scores = evaluate(population)
    best = int(np.argmax(scores))
    trace = [float(scores[best])]
    generations = 0
    converged = False
    pairs = 2 if cfg.strategy == "best2" else 1

    while generations < cfg.max_iterations:
        remaining = evaluate.remaining()
        if remaining == 0:
            break
        anchor = population[best]
        trials = np.empty_like(population)
        for member in range(size):
            picks = _distinct(rng, size, 2 * pairs, member)
            mutant = anchor + cfg.mutation * (population[picks[0]] - population[picks[1]])
            if pairs == 2:
                mutant = mutant + cfg.mutation * (population[picks[2]] - population[picks[3]])
            mask = rng.random(dims) < cfg.crossover
            mask[rng.integers(dims)] = True
            trials[member] = np.clip(np.where(mask, mutant, population[member]), lower, upper)

        limit = size if remaining is None else min(size, remaining)
        trial_scores = evaluate(trials[:limit])
        improved = np.flatnonzero(trial_scores > scores[:limit])
        population[improved] = trials[improved]
        scores[improved] = trial_scores[improved]
        best = int(np.argmax(scores))
        generations += 1
        trace.append(float(scores[best]))
        spread = float(np.std(scores))
        log_event(
            log,
            "de_generation",
            {
                "generation": generations,
                "best_fitness": trace[-1],
                "fitness_std": spread,
                "evaluations": evaluate.count,
            },
        )
        if spread < cfg.tolerance:
            converged = True
            log_event(log, "de_converged", {"generation": generations, "fitness_std": spread})
            break

    return SearchResult(
        best_params=space.snap(population[best]),
        best_fitness=float(scores[best]),
        trace=tuple(trace),
        evaluations=evaluate.count,
        generations=generations,
        converged=converged,
    )


def grid_search(
    fitness: Fitness,
    space: SearchSpace,
    *,
    max_evaluations: int | None = None,
    jobs: int = 1,
    log: RunLog | None = None,
) -> SearchResult:
    """Exhaustive scan of the grid in lexicographic order; first maximum wins."""

    points = list(space.grid_points())
    if max_evaluations is not None:
        points = points[: max(1, max_evaluations)]
    evaluate = _Evaluator(fitness, space, None, jobs)
    scores = evaluate(np.array(points))
    best = int(np.argmax(scores))
    trace = tuple(float(value) for value in np.maximum.accumulate(scores))
    log_event(
        log, "grid_search", {"evaluations": evaluate.count, "best_fitness": float(scores[best])}
    )
    return SearchResult(
        best_params=space.snap(points[best]),
        best_fitness=float(scores[best]),
        trace=trace,
        evaluations=evaluate.count,
        generations=0,
        converged=True,
    )
