from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import pytest

from tubespoof.acoustics import Environment
from tubespoof.attack import (
    RESULT_COLUMNS,
    attack_target,
    reachable_set,
    realize,
    render_adversarial,
    results_frame,
)
from tubespoof.audio import AudioBuffer
from tubespoof.run_log import RunLog
from tubespoof.schema_check import load_schema, validate
from tubespoof.search import Axis, DEConfig, SearchSpace
from tubespoof.synthetic import PlantedInstance

if TYPE_CHECKING:
    from conftest import PlantedAttack

ENV = Environment()
SMALL = DEConfig(population=10, max_iterations=2, seed=3)
NEAR_PLANT = SearchSpace(f0=Axis("f0_hz", 150.0, 270.0, 10.0), q0=Axis("q0", 40.0, 60.0, 10.0))


def test_planted_victim_is_recovered(planted_attacks: list[PlantedAttack]) -> None:
    recovered = 0
    for attack in planted_attacks:
        result = attack.result
        assert result.invocations <= 600
        if result.success and abs(result.f0_hz - attack.instance.victim_f0_hz) <= 10.0:
            recovered += 1
    assert recovered >= 16


def test_attack_result_is_consistent(planted_attacks: list[PlantedAttack]) -> None:
    schema = load_schema("attack_result")
    for attack in planted_attacks[:5]:
        result = attack.result
        assert validate(schema, result.to_dict()) == []
        assert len(result.score_trace) == result.generations + 1
        assert result.score_trace[-1] == result.best_score
        utterances = len(attack.instance.attack_utterances)
        assert result.oracle_queries <= utterances * result.invocations + utterances
        assert len(result.predictions) == utterances


def test_best_score_matches_rendered_audio(planted_attacks: list[PlantedAttack]) -> None:
    attack = planted_attacks[0]
    model = attack.instance.model
    rendered = render_adversarial(attack.result, attack.instance.attack_utterances)
    scores = [model.identify(buf)[1].score(attack.result.target_label) for buf in rendered]
    assert float(np.mean(scores)) == pytest.approx(attack.result.best_score, abs=1e-9)
    assert render_adversarial(attack.result, []) == []


def test_attack_is_deterministic(planted_instance: PlantedInstance) -> None:
    args = (
        planted_instance.attack_utterances,
        planted_instance.victim_label,
        planted_instance.model,
        SearchSpace(),
        SMALL,
        ENV,
    )
    first = attack_target(*args)
    assert attack_target(*args).to_dict() == first.to_dict()
    assert attack_target(*args, jobs=3).to_dict() == first.to_dict()


def test_grid_attack_hits_planted_tube(planted_instance: PlantedInstance) -> None:
    result = attack_target(
        planted_instance.attack_utterances,
        planted_instance.victim_label,
        planted_instance.model,
        NEAR_PLANT,
        SMALL,
        ENV,
        search="grid",
    )
    assert result.invocations == NEAR_PLANT.grid_size() == 39
    assert result.generations == 0
    assert result.de is None
    assert result.search == "grid"
    assert result.best_score > 0.0


def test_magnitude_only_attack_is_well_formed(planted_instance: PlantedInstance) -> None:
    result = attack_target(
        planted_instance.attack_utterances,
        planted_instance.victim_label,
        planted_instance.model,
        SearchSpace(),
        SMALL,
        ENV,
        magnitude_only=True,
    )
    assert validate(load_schema("attack_result"), result.to_dict()) == []
    assert 0.0 <= result.best_score <= 1.0


def test_two_tube_attack_is_well_formed(planted_instance: PlantedInstance) -> None:
    space = SearchSpace(mode="two")
    result = attack_target(
        planted_instance.attack_utterances[:1],
        planted_instance.victim_label,
        planted_instance.model,
        space,
        DEConfig(population=8, max_iterations=1, seed=1),
        ENV,
    )
    assert validate(load_schema("attack_result"), result.to_dict()) == []
    assert set(result.best_params) == {"l1_m", "l2_m", "area_ratio"}
    if result.tube is not None:
        expected = result.best_params["l1_m"] + result.best_params["l2_m"]
        assert result.length_m == pytest.approx(expected)


def test_attack_input_errors(planted_instance: PlantedInstance) -> None:
    utts = planted_instance.attack_utterances
    model = planted_instance.model
    with pytest.raises(KeyError):
        attack_target(utts, "nobody", model, SearchSpace(), SMALL, ENV)
    with pytest.raises(ValueError):
        attack_target([], planted_instance.victim_label, model, SearchSpace(), SMALL, ENV)
    mixed = [utts[0], AudioBuffer(utts[1].samples, 16000)]
    with pytest.raises(ValueError):
        attack_target(mixed, planted_instance.victim_label, model, SearchSpace(), SMALL, ENV)
    with pytest.raises(ValueError):
        attack_target(
            utts, planted_instance.victim_label, model, SearchSpace(), SMALL, ENV, search="anneal"
        )


def test_realize_single_and_empty_two_tube(tmp_path: Path) -> None:
    single = realize([200.0, 50.0], SearchSpace(), ENV, 8000)
    assert single.f0_hz == pytest.approx(200.0)
    assert single.q0 == pytest.approx(50.0, abs=0.1)
    assert not single.saturated
    assert single.bank.sample_rate == 8000

    log = RunLog(tmp_path / "events.jsonl")
    with pytest.raises(ValueError):
        realize([1.2, 1.1, 1.0], SearchSpace(mode="two"), ENV, 100, log=log)
    assert [event["type"] for event in log.read_events()] == ["two_tube_no_roots"]


def test_reachable_set_finds_planted_targets(
    planted_instance: PlantedInstance, tmp_path: Path
) -> None:
    log = RunLog(tmp_path / "events.jsonl")
    targets = ("decoy_160", "decoy_260", planted_instance.victim_label)
    summary = reachable_set(
        planted_instance.attack_utterances,
        planted_instance.model,
        NEAR_PLANT,
        SMALL,
        ENV,
        targets=targets,
        search="grid",
        log=log,
    )
    assert summary.count >= 2
    assert sorted(summary.results) == sorted(targets)
    assert validate(load_schema("reachable_summary"), summary.to_dict()) == []
    events = [event["type"] for event in log.read_events()]
    assert events.count("reachable_target") == 3


def test_reachable_set_with_zero_budget(planted_instance: PlantedInstance) -> None:
    summary = reachable_set(
        planted_instance.attack_utterances[:1],
        planted_instance.model,
        SearchSpace(),
        SMALL,
        ENV,
        per_target_budget=0,
        exclude=(planted_instance.attacker_label,),
    )
    labels = set(planted_instance.model.labels) - {planted_instance.attacker_label}
    assert set(summary.results) == labels
    for result in summary.results.values():
        assert result.generations == 0
        assert result.invocations == SMALL.population
        assert result.de.max_evaluations == 0
    frame = summary.to_frame()
    assert frame.height == len(labels)
    assert frame.columns == list(RESULT_COLUMNS)
    assert summary.to_dict()["attempted"] == len(labels)


def test_reachable_set_rejects_unknown_targets(planted_instance: PlantedInstance) -> None:
    with pytest.raises(KeyError):
        reachable_set(
            planted_instance.attack_utterances,
            planted_instance.model,
            SearchSpace(),
            SMALL,
            ENV,
            targets=("nobody",),
        )


def test_results_frame_of_nothing() -> None:
    frame = results_frame([])
    assert frame.is_empty()
    assert frame.columns == list(RESULT_COLUMNS)


def test_larger_budget_never_loses_ground(planted_instance: PlantedInstance) -> None:
    targets = (planted_instance.victim_label, *planted_instance.decoy_labels)
    counts = {100: 0, 250: 0}
    for seed in (0, 1, 2):
        summaries = {
            budget: reachable_set(
                planted_instance.attack_utterances,
                planted_instance.model,
                SearchSpace(),
                DEConfig(seed=seed),
                ENV,
                per_target_budget=budget,
                targets=targets,
            )
            for budget in counts
        }
        small, large = summaries[100], summaries[250]
        assert small.per_target_budget == 100
        for label in targets:
            assert large.results[label].invocations <= 250
            assert large.results[label].best_score >= small.results[label].best_score
        for budget, summary in summaries.items():
            counts[budget] += summary.count
    assert counts[250] >= counts[100]
