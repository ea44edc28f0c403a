from __future__ import annotations

from dataclasses import dataclass

import pytest

from tubespoof.acoustics import Environment
from tubespoof.attack import AttackResult, attack_target
from tubespoof.search import DEConfig, SearchSpace
from tubespoof.synthetic import PlantedInstance, build_planted_instance

PLANTED_SEEDS = tuple(range(20))


@dataclass(frozen=True)
class PlantedAttack:
    instance: PlantedInstance
    result: AttackResult


@pytest.fixture(scope="session")
def planted_instance() -> PlantedInstance:
    return build_planted_instance(0)


@pytest.fixture(scope="session")
def planted_attacks(planted_instance: PlantedInstance) -> list[PlantedAttack]:
    """One full-size DE attack on the victim of each planted instance."""

    env = Environment()
    attacks = []
    for seed in PLANTED_SEEDS:
        instance = planted_instance if seed == 0 else build_planted_instance(seed)
        result = attack_target(
            instance.attack_utterances,
            instance.victim_label,
            instance.model,
            SearchSpace(),
            DEConfig(seed=seed),
            env,
        )
        attacks.append(PlantedAttack(instance, result))
    return attacks
