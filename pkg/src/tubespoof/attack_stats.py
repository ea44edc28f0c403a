from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import polars as pl

from .asi import SpeakerModel, SpeakerOracle, cosine_similarity, embed
from .attack import AttackResult
from .audio import AudioBuffer

CONSISTENCY_RUNS = 6
CONSISTENCY_SNR_DB = 30.0
EFFECTIVE_F0_LIMIT_HZ = 400.0
EFFECTIVE_Q_FLOOR = 50.0


def top_two_frame(oracle: SpeakerOracle, utterances: Sequence[AudioBuffer]) -> pl.DataFrame:
    rows = []
    for utt in utterances:
        _, scores = oracle.identify(utt)
        (first_label, first), (second_label, second) = scores.top(2)
        rows.append(
            {
                "top1_label": first_label,
                "top1": first,
                "top2_label": second_label,
                "top2": second,
                "gap": first - second,
            }
        )
    return pl.DataFrame(rows)


def _summarize(frame: pl.DataFrame) -> dict[str, Any]:
    stats = frame.select(
        [
            pl.len().alias("count"),
            pl.col("top1").mean().alias("mean_top1"),
            pl.col("top1").median().alias("median_top1"),
            pl.col("top2").mean().alias("mean_top2"),
            pl.col("top2").median().alias("median_top2"),
            pl.col("gap").mean().alias("mean_gap"),
            pl.col("gap").median().alias("median_gap"),
        ]
    )
    return stats.to_dicts()[0]


@dataclass(frozen=True)
class ConfidenceGapSummary:
    clean: dict[str, Any]
    adversarial: dict[str, Any]
    clean_rows: pl.DataFrame
    adversarial_rows: pl.DataFrame

    def to_frame(self) -> pl.DataFrame:
        return pl.concat(
            [
                self.clean_rows.with_columns(pl.lit("clean").alias("set")),
                self.adversarial_rows.with_columns(pl.lit("adversarial").alias("set")),
            ]
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "clean": dict(self.clean),
            "adversarial": dict(self.adversarial),
            "gap_difference": self.adversarial["mean_gap"] - self.clean["mean_gap"],
        }


def confidence_gap_stats(
    oracle: SpeakerOracle,
    clean: Sequence[AudioBuffer],
    adversarial: Sequence[AudioBuffer],
) -> ConfidenceGapSummary:
    """Top-1/top-2 score distributions for clean and adversarial utterances."""

    if not clean or not adversarial:
        raise ValueError("Both utterance sets must be non-empty.")
    if len(oracle.labels) < 2:
        raise ValueError("Confidence gaps need at least two enrolled labels.")
    clean_rows = top_two_frame(oracle, clean)
    adversarial_rows = top_two_frame(oracle, adversarial)
    return ConfidenceGapSummary(
        clean=_summarize(clean_rows),
        adversarial=_summarize(adversarial_rows),
        clean_rows=clean_rows,
        adversarial_rows=adversarial_rows,
    )


@dataclass(frozen=True)
class SimilaritySummary:
    victim_label: str
    nonvictim_labels: tuple[str, ...]
    victim_mean: float
    nonvictim_mean: float
    per_utterance: tuple[tuple[float, float], ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "victim_label": self.victim_label,
            "nonvictim_labels": list(self.nonvictim_labels),
            "attack_victim_mean": self.victim_mean,
            "attack_nonvictim_mean": self.nonvictim_mean,
            "per_utterance": [
                {"victim": victim, "nonvictim": other} for victim, other in self.per_utterance
            ],
        }


def embedding_similarity_stats(
    model: SpeakerModel,
    attack_utts: Sequence[AudioBuffer],
    victim_label: str,
    nonvictim_labels: Iterable[str],
) -> SimilaritySummary:
    """Cosine between standardized attack embeddings and enrolled centroids."""

    others = tuple(nonvictim_labels)
    if not attack_utts:
        raise ValueError("Need at least one attack utterance.")
    if not others:
        raise ValueError("Need at least one non-victim label.")
    if victim_label in others:
        raise ValueError(f"Victim {victim_label!r} is also listed as a non-victim.")
    victim = model.standardize(model.centroid(victim_label))
    rest = [model.standardize(model.centroid(label)) for label in others]

    pairs = []
    for utt in attack_utts:
        z = model.standardize(embed(utt, model.mfcc).vector)
        pairs.append(
            (
                cosine_similarity(z, victim),
                float(np.mean([cosine_similarity(z, centroid) for centroid in rest])),
            )
        )
    return SimilaritySummary(
        victim_label=victim_label,
        nonvictim_labels=others,
        victim_mean=float(np.mean([victim for victim, _ in pairs])),
        nonvictim_mean=float(np.mean([other for _, other in pairs])),
        per_utterance=tuple(pairs),
    )


def consistency_rate(prediction_runs: Sequence[Sequence[str]]) -> float:
    """Percentage of positions where every run predicts the same label."""

    if len(prediction_runs) < 2:
        raise ValueError("Consistency needs at least two prediction runs.")
    lengths = {len(run) for run in prediction_runs}
    if len(lengths) != 1:
        raise ValueError(f"Prediction runs differ in length: {sorted(lengths)}.")
    length = lengths.pop()
    if length == 0:
        raise ValueError("Prediction runs are empty.")
    agreed = sum(len({run[i] for run in prediction_runs}) == 1 for i in range(length))
    return 100.0 * agreed / length


def noisy_prediction_runs(
    oracle: SpeakerOracle,
    utterances: Sequence[AudioBuffer],
    *,
    runs: int = CONSISTENCY_RUNS,
    snr_db: float = CONSISTENCY_SNR_DB,
    seed: int = 0,
) -> list[list[str]]:
    """Re-identify each utterance ``runs`` times under fresh white noise."""

    rng = np.random.default_rng(seed)
    results = []
    for _ in range(runs):
        labels = []
        for utt in utterances:
            power = float(np.mean(utt.samples**2))
            sigma = np.sqrt(power / 10 ** (snr_db / 10))
            noise = sigma * rng.standard_normal(len(utt))
            noisy = AudioBuffer(utt.samples + noise, utt.sample_rate)
            labels.append(oracle.identify(noisy)[0])
        results.append(labels)
    return results


def match_rate(
    simulated: Mapping[str, str | None],
    second: Mapping[str, str | None],
) -> float:
    """Share of simulated successes that the second condition reproduces.

    Values are the successful target label for an utterance, or ``None``.
    """

    if set(simulated) != set(second):
        missing = sorted(set(simulated) ^ set(second))
        raise ValueError(f"Utterance keys differ between conditions: {missing}")
    successes = [key for key, label in simulated.items() if label is not None]
    if not successes:
        return 0.0
    matched = sum(second[key] == simulated[key] for key in successes)
    return 100.0 * matched / len(successes)


def resonance_effectiveness(
    results: Iterable[AttackResult],
    *,
    f0_limit_hz: float = EFFECTIVE_F0_LIMIT_HZ,
    q_floor: float = EFFECTIVE_Q_FLOOR,
    f0_bin_hz: float = 100.0,
    q_bin: float = 10.0,
) -> dict[str, Any]:
    """Where in (f0, Q0) the successful tubes sit."""

    rows = [
        {"f0_hz": result.f0_hz, "q0": result.q0}
        for result in results
        if result.success and result.f0_hz is not None and result.q0 is not None
    ]
    frame = pl.DataFrame(rows, schema={"f0_hz": pl.Float64, "q0": pl.Float64})
    if frame.is_empty():
        return {"successes": 0, "in_region": 0, "fraction_in_region": 0.0, "histogram": []}

    in_region = frame.filter((pl.col("f0_hz") <= f0_limit_hz) & (pl.col("q0") >= q_floor)).height
    histogram = (
        frame.with_columns(
            [
                ((pl.col("f0_hz") / f0_bin_hz).floor() * f0_bin_hz).alias("f0_bin_hz"),
                ((pl.col("q0") / q_bin).floor() * q_bin).alias("q0_bin"),
            ]
        )
        .group_by(["f0_bin_hz", "q0_bin"])
        .len()
        .rename({"len": "count"})
        .sort(["f0_bin_hz", "q0_bin"])
    )
    return {
        "successes": frame.height,
        "in_region": in_region,
        "fraction_in_region": in_region / frame.height,
        "histogram": histogram.to_dicts(),
    }
