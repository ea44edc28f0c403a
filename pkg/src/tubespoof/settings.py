from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from .acoustics import REFERENCE_TUBES, Environment, TubeSpec
from .asi import MfccConfig
from .schema_check import load_schema, validate_or_raise
from .search import DEConfig, SearchSpace

SCHEMA_VERSION = 1
DEFAULT_SAMPLE_RATE = 16000
DEFAULT_OUTPUT_DIR = "results"


def default_study_tubes() -> tuple[TubeSpec, ...]:
    return tuple(TubeSpec(length, diameter) for length, diameter, _ in REFERENCE_TUBES.values())


@dataclass(frozen=True)
class OracleSelection:
    """Exactly one of a surrogate model file or an adapter command line."""

    model: Path | None = None
    adapter: str | None = None

    def __post_init__(self) -> None:
        if (self.model is None) == (self.adapter is None):
            raise ValueError("Oracle selection needs exactly one of 'model' or 'adapter'.")

    @classmethod
    def from_dict(cls, data: dict[str, Any], base: Path) -> "OracleSelection":
        model = data.get("model")
        return cls(
            model=_resolve(base, model) if model is not None else None,
            adapter=data.get("adapter"),
        )

    def to_dict(self) -> dict[str, Any]:
        if self.model is not None:
            return {"model": str(self.model)}
        return {"adapter": self.adapter}


@dataclass(frozen=True)
class RunConfig:
    environment: Environment = field(default_factory=Environment)
    mfcc: MfccConfig = field(default_factory=MfccConfig)
    search: SearchSpace = field(default_factory=SearchSpace)
    de: DEConfig = field(default_factory=DEConfig)
    corpus_dir: Path | None = None
    output_dir: Path = Path(DEFAULT_OUTPUT_DIR)
    oracle: OracleSelection | None = None
    sample_rate: int = DEFAULT_SAMPLE_RATE
    jobs: int = 1
    utterances_per_attack: int = 1
    study_tubes: tuple[TubeSpec, ...] = field(default_factory=default_study_tubes)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self) -> None:
        if self.mfcc.sample_rate != self.sample_rate:
            raise ValueError(
                f"sample_rate {self.sample_rate} disagrees with mfcc.sample_rate "
                f"{self.mfcc.sample_rate}."
            )
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1.")
        if self.utterances_per_attack < 1:
            raise ValueError("utterances_per_attack must be at least 1.")

    @classmethod
    def from_dict(cls, data: dict[str, Any], base: Path | None = None) -> "RunConfig":
        base = base or Path.cwd()
        sample_rate = int(data.get("sample_rate", DEFAULT_SAMPLE_RATE))
        mfcc_data = {"sample_rate": sample_rate, **data.get("mfcc", {})}
        corpus_dir = data.get("corpus_dir")
        oracle = data.get("oracle")
        tubes = data.get("study_tubes")
        return cls(
            environment=Environment.from_dict(data.get("environment", {})),
            mfcc=MfccConfig.from_dict(mfcc_data),
            search=SearchSpace.from_dict(data.get("search", {})),
            de=DEConfig.from_dict(data.get("de", {})),
            corpus_dir=_resolve(base, corpus_dir) if corpus_dir is not None else None,
            output_dir=_resolve(base, data.get("output_dir", DEFAULT_OUTPUT_DIR)),
            oracle=OracleSelection.from_dict(oracle, base) if oracle is not None else None,
            sample_rate=sample_rate,
            jobs=int(data.get("jobs", 1)),
            utterances_per_attack=int(data.get("utterances_per_attack", 1)),
            study_tubes=(
                tuple(TubeSpec(float(t["length_m"]), float(t["diameter_m"])) for t in tubes)
                if tubes is not None
                else default_study_tubes()
            ),
            schema_version=int(data.get("schema_version", SCHEMA_VERSION)),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "environment": self.environment.to_dict(),
            "mfcc": self.mfcc.to_dict(),
            "search": self.search.to_dict(),
            "de": self.de.to_dict(),
            "corpus_dir": str(self.corpus_dir) if self.corpus_dir is not None else None,
            "output_dir": str(self.output_dir),
            "oracle": self.oracle.to_dict() if self.oracle is not None else None,
            "sample_rate": self.sample_rate,
            "jobs": self.jobs,
            "utterances_per_attack": self.utterances_per_attack,
            "study_tubes": [tube.to_dict() for tube in self.study_tubes],
        }

    def with_overrides(
        self,
        *,
        seed: int | None = None,
        temperature_k: float | None = None,
        jobs: int | None = None,
        output_dir: Path | None = None,
    ) -> "RunConfig":
        """Apply command-line flags; a flag that is ``None`` keeps the file value."""

        changes: dict[str, Any] = {}
        if seed is not None:
            changes["de"] = self.de.with_overrides(seed=seed)
        if temperature_k is not None:
            changes["environment"] = Environment(temperature_k=temperature_k)
        if jobs is not None:
            changes["jobs"] = jobs
        if output_dir is not None:
            changes["output_dir"] = Path(output_dir)
        return replace(self, **changes)


def _resolve(base: Path, value: str | Path) -> Path:
    path = Path(value).expanduser()
    return path if path.is_absolute() else (base / path).resolve()


def load_run_config(path: Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Run config not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"Run config {path} is not valid JSON: {exc}") from exc
    validate_or_raise(data, load_schema("run_config"), "run config")
    if data.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ValueError(
            f"Run config schema_version {data['schema_version']} is not supported "
            f"(expected {SCHEMA_VERSION})."
        )

    config = RunConfig.from_dict(data, base=path.resolve().parent)
    if config.corpus_dir is not None and not config.corpus_dir.is_dir():
        raise FileNotFoundError(f"Corpus directory not found: {config.corpus_dir}")
    model = config.oracle.model if config.oracle is not None else None
    if model is not None and not model.is_file():
        raise FileNotFoundError(f"Speaker model not found: {model}")
    return config


def save_run_config(path: Path, config: RunConfig) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
