"""Black-box tube search against a speaker-identification oracle."""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np
import polars as pl

from .acoustics import (
    Environment,
    ResonanceProfile,
    TubeSpec,
    TwoTubeSpec,
    equivalent_diameter,
    resonance_profile_single,
    resonances_two_tube,
    tube_from_resonance,
)
from .asi import SpeakerOracle
from .audio import AudioBuffer
from .filterbank import BandPassFilterBank, apply, bank_from_profile
from .run_log import RunLog, log_event
from .search import (
    SINGLE_TUBE,
    DEConfig,
    SearchResult,
    SearchSpace,
    differential_evolution,
    grid_search,
)

SEARCH_METHODS = ("de", "grid")

RESULT_COLUMNS = {
    "target": pl.Utf8,
    "success": pl.Boolean,
    "best_score": pl.Float64,
    "invocations": pl.Int64,
    "f0_Hz": pl.Float64,
    "Q0": pl.Float64,
    "L_m": pl.Float64,
    "d_m": pl.Float64,
}


@dataclass(frozen=True)
class Realization:
    """A search point turned into hardware and the filter that simulates it."""

    tube: TubeSpec | TwoTubeSpec
    profile: ResonanceProfile
    bank: BandPassFilterBank
    saturated: bool = False

    @property
    def f0_hz(self) -> float:
        return float(self.profile.harmonics[0][0])

    @property
    def q0(self) -> float:
        return float(self.profile.harmonics[0][1])

    @property
    def length_m(self) -> float:
        if isinstance(self.tube, TwoTubeSpec):
            return self.tube.first.length_m + self.tube.second.length_m
        return self.tube.length_m

    @property
    def diameter_m(self) -> float:
        if isinstance(self.tube, TwoTubeSpec):
            return equivalent_diameter(self.tube)
        return self.tube.diameter_m


def realize(
    point: Any,
    space: SearchSpace,
    env: Environment,
    sample_rate: int,
    *,
    magnitude_only: bool = False,
    log: RunLog | None = None,
) -> Realization:
    """Map a snapped point to its tube and filter bank.

    Raises ValueError when the point has no physical realization: the tube
    leaves its bounds, the two sections are identical or no resonance falls
    below Nyquist.
    """

    params = space.named(space.snap(point))
    nyquist = sample_rate / 2
    if space.mode == SINGLE_TUBE:
        design = tube_from_resonance(params["f0_hz"], params["q0"], env)
        profile = resonance_profile_single(
            design.tube, env, nyquist, decay_exponent=space.q_decay_exponent
        )
        bank = bank_from_profile(profile, sample_rate, magnitude_only=magnitude_only)
        return Realization(design.tube, profile, bank, saturated=design.saturated)

    d1 = space.d1_m
    spec = TwoTubeSpec(
        TubeSpec(params["l1_m"], d1),
        TubeSpec(params["l2_m"], d1 * math.sqrt(params["area_ratio"])),
    )
    profile = resonances_two_tube(spec, env, nyquist, decay_exponent=space.q_decay_exponent)
    if not len(profile):
        log_event(log, "two_tube_no_roots", {"params": params, "warning": profile.warning})
        raise ValueError(profile.warning or "Two-tube profile is empty.")
    bank = bank_from_profile(profile, sample_rate, magnitude_only=magnitude_only)
    return Realization(spec, profile, bank)


@dataclass(frozen=True)
class AttackResult:
    target_label: str
    space: SearchSpace
    best_params: dict[str, float]
    best_score: float
    success: bool
    invocations: int
    oracle_queries: int
    score_trace: tuple[float, ...]
    generations: int
    converged: bool
    search: str
    predictions: tuple[str, ...]
    tube: dict[str, Any] | None
    f0_hz: float | None = None
    q0: float | None = None
    length_m: float | None = None
    diameter_m: float | None = None
    saturated: bool = False
    de: DEConfig | None = None
    environment: Environment = field(default_factory=Environment)

    @property
    def best_point(self) -> np.ndarray:
        return np.array([self.best_params[name] for name in self.space.names])

    def row(self) -> dict[str, Any]:
        return {
            "target": self.target_label,
            "success": self.success,
            "best_score": self.best_score,
            "invocations": self.invocations,
            "f0_Hz": self.f0_hz,
            "Q0": self.q0,
            "L_m": self.length_m,
            "d_m": self.diameter_m,
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            "target_label": self.target_label,
            "mode": self.space.mode,
            "search": self.search,
            "best_params": dict(self.best_params),
            "best_score": self.best_score,
            "success": self.success,
            "invocations": self.invocations,
            "oracle_queries": self.oracle_queries,
            "score_trace": list(self.score_trace),
            "generations": self.generations,
            "converged": self.converged,
            "predictions": list(self.predictions),
            "tube": self.tube,
            "resonance": {
                "f0_hz": self.f0_hz,
                "q0": self.q0,
                "length_m": self.length_m,
                "diameter_m": self.diameter_m,
                "saturated": self.saturated,
            },
            "search_space": self.space.to_dict(),
            "de": self.de.to_dict() if self.de else None,
            "environment": self.environment.to_dict(),
        }


class _Fitness:
    """Mean target score over the attacker's utterances, memoized per grid point."""

    def __init__(
        self,
        utterances: Sequence[AudioBuffer],
        target: str,
        oracle: SpeakerOracle,
        space: SearchSpace,
        env: Environment,
        *,
        magnitude_only: bool,
        log: RunLog | None,
    ) -> None:
        self.utterances = list(utterances)
        self.target = target
        self.oracle = oracle
        self.space = space
        self.env = env
        self.magnitude_only = magnitude_only
        self.log = log
        self.queries = 0
        self._cache: dict[tuple[float, ...], float] = {}
        self._lock = threading.Lock()

    def __call__(self, point: np.ndarray) -> float:
        key = tuple(float(value) for value in point)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        try:
            realization = realize(
                point,
                self.space,
                self.env,
                self.utterances[0].sample_rate,
                magnitude_only=self.magnitude_only,
                log=self.log,
            )
        except ValueError:
            value, queried = 0.0, 0
        else:
            scores = []
            for utt in self.utterances:
                _, vector = self.oracle.identify(apply(realization.bank, utt))
                scores.append(vector.score(self.target))
            value, queried = float(np.mean(scores)), len(scores)
        # Concurrent misses on one point are counted once.
        with self._lock:
            if key not in self._cache:
                self._cache[key] = value
                self.queries += queried
            return self._cache[key]


def _check_inputs(utterances: Sequence[AudioBuffer], oracle: SpeakerOracle, target: str) -> None:
    if not utterances:
        raise ValueError("Attack needs at least one attacker utterance.")
    rates = {utt.sample_rate for utt in utterances}
    if len(rates) != 1:
        raise ValueError(f"Attacker utterances mix sample rates: {sorted(rates)}.")
    if target not in oracle.labels:
        raise KeyError(f"Target {target!r} is not enrolled in the oracle.")


def attack_target(
    attacker_utts: Sequence[AudioBuffer],
    target: str,
    oracle: SpeakerOracle,
    space: SearchSpace,
    cfg: DEConfig,
    env: Environment,
    *,
    search: str = "de",
    magnitude_only: bool = False,
    jobs: int = 1,
    log: RunLog | None = None,
) -> AttackResult:
    _check_inputs(attacker_utts, oracle, target)
    if search not in SEARCH_METHODS:
        raise ValueError(f"Unknown search method {search!r}; expected one of {SEARCH_METHODS}.")

    log_event(log, "attack_started", {"target": target, "mode": space.mode, "search": search})
    fitness = _Fitness(
        attacker_utts, target, oracle, space, env, magnitude_only=magnitude_only, log=log
    )
    outcome: SearchResult
    if search == "grid":
        outcome = grid_search(
            fitness, space, max_evaluations=cfg.max_evaluations, jobs=jobs, log=log
        )
    else:
        outcome = differential_evolution(fitness, space, cfg, jobs=jobs, log=log)

    best_params = space.named(outcome.best_params)
    sample_rate = attacker_utts[0].sample_rate
    try:
        realization: Realization | None = realize(
            outcome.best_params, space, env, sample_rate, magnitude_only=magnitude_only
        )
    except ValueError:
        realization = None

    predictions: list[str] = []
    if realization is not None:
        for utt in attacker_utts:
            label, _ = oracle.identify(apply(realization.bank, utt))
            predictions.append(label)
    hits = sum(label == target for label in predictions)
    success = realization is not None and 2 * hits > len(attacker_utts)

    result = AttackResult(
        target_label=target,
        space=space,
        best_params=best_params,
        best_score=outcome.best_fitness,
        success=success,
        invocations=outcome.evaluations,
        oracle_queries=fitness.queries + len(predictions),
        score_trace=outcome.trace,
        generations=outcome.generations,
        converged=outcome.converged,
        search=search,
        predictions=tuple(predictions),
        tube=realization.tube.to_dict() if realization else None,
        f0_hz=realization.f0_hz if realization else None,
        q0=realization.q0 if realization else None,
        length_m=realization.length_m if realization else None,
        diameter_m=realization.diameter_m if realization else None,
        saturated=realization.saturated if realization else False,
        de=cfg if search == "de" else None,
        environment=env,
    )
    log_event(
        log,
        "attack_finished",
        {
            "target": target,
            "success": success,
            "best_score": result.best_score,
            "invocations": result.invocations,
        },
    )
    return result


def render_adversarial(
    result: AttackResult,
    utterances: Sequence[AudioBuffer],
    env: Environment | None = None,
    *,
    magnitude_only: bool = False,
) -> list[AudioBuffer]:
    """Filter ``utterances`` through the tube an attack settled on."""

    if not utterances:
        return []
    env = env or result.environment
    rate = utterances[0].sample_rate
    realization = realize(result.best_point, result.space, env, rate, magnitude_only=magnitude_only)
    return [apply(realization.bank, utt) for utt in utterances]


@dataclass(frozen=True)
class ReachableSummary:
    results: dict[str, AttackResult]
    per_target_budget: int | None

    @property
    def reachable(self) -> list[str]:
        return [label for label, result in self.results.items() if result.success]

    @property
    def count(self) -> int:
        return len(self.reachable)

    def to_frame(self) -> pl.DataFrame:
        return results_frame(self.results.values())

    def to_dict(self) -> dict[str, Any]:
        return {
            "per_target_budget": self.per_target_budget,
            "attempted": len(self.results),
            "reachable_count": self.count,
            "reachable": self.reachable,
            "results": {label: result.to_dict() for label, result in self.results.items()},
        }


def reachable_set(
    attacker_utts: Sequence[AudioBuffer],
    oracle: SpeakerOracle,
    space: SearchSpace,
    cfg: DEConfig,
    env: Environment,
    *,
    per_target_budget: int | None = None,
    targets: Iterable[str] | None = None,
    exclude: Iterable[str] = (),
    search: str = "de",
    magnitude_only: bool = False,
    jobs: int = 1,
    log: RunLog | None = None,
) -> ReachableSummary:
    """Attack every enrolled label (or ``targets``) with the same seed and budget."""

    skipped = set(exclude)
    labels = list(oracle.labels if targets is None else targets)
    unknown = [label for label in labels if label not in oracle.labels]
    if unknown:
        raise KeyError(f"Targets not enrolled in the oracle: {unknown}")
    run_cfg = cfg.with_overrides(max_evaluations=per_target_budget)

    results: dict[str, AttackResult] = {}
    for label in sorted(labels):
        if label in skipped:
            continue
        result = attack_target(
            attacker_utts,
            label,
            oracle,
            space,
            run_cfg,
            env,
            search=search,
            magnitude_only=magnitude_only,
            jobs=jobs,
            log=log,
        )
        results[label] = result
        log_event(
            log,
            "reachable_target",
            {"target": label, "success": result.success, "best_score": result.best_score},
        )
    return ReachableSummary(results=results, per_target_budget=per_target_budget)


def results_frame(results: Iterable[AttackResult]) -> pl.DataFrame:
    return pl.DataFrame([result.row() for result in results], schema=RESULT_COLUMNS)
