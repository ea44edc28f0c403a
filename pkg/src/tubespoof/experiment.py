from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

import polars as pl

from .audio import AudioBuffer, read_wav, resample, write_wav
from .run_log import RunLog
from .schema_check import load_schema, validate_or_raise
from .utils import hash_file, hash_text

AUDIO_DIRNAME = "audio"
INPUTS_FILENAME = "inputs.json"
WAV_SUFFIX = ".wav"


def dump_json(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def check_output(data: dict[str, Any], schema: str) -> None:
    validate_or_raise(data, load_schema(schema), schema.replace("_", " "))


@dataclass
class ExperimentDir:
    """Output directory of one run: JSON results, CSV tables, audio and the event log."""

    root: Path
    log: RunLog

    @classmethod
    def create(cls, root: Path) -> "ExperimentDir":
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        return cls(root=root, log=RunLog.in_directory(root))

    def audio_dir(self) -> Path:
        path = self.root / AUDIO_DIRNAME
        path.mkdir(parents=True, exist_ok=True)
        return path

    def save_json(self, name: str, data: dict[str, Any], *, schema: str) -> Path:
        check_output(data, schema)
        path = self.root / name
        path.write_text(dump_json(data))
        return path

    def write_table(self, name: str, frame: pl.DataFrame) -> Path:
        path = self.root / name
        frame.write_csv(path)
        return path

    def write_audio(self, name: str, buf: AudioBuffer) -> Path:
        path = self.audio_dir() / name
        write_wav(path, buf)
        return path

    def record_inputs(self, paths: Iterable[Path], config: dict[str, Any] | None = None) -> Path:
        """Fingerprint the files and effective config a run consumed."""

        files = {str(path): hash_file(Path(path)) for path in sorted(paths, key=str)}
        data: dict[str, Any] = {"files": files}
        if config is not None:
            data["config_sha256"] = hash_text(dump_json(config))
        path = self.root / INPUTS_FILENAME
        path.write_text(dump_json(data))
        return path


def wav_files(directory: Path) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"Audio directory not found: {directory}")
    return sorted(path for path in directory.iterdir() if path.suffix.lower() == WAV_SUFFIX)


def load_utterances(directory: Path, sample_rate: int) -> list[AudioBuffer]:
    paths = wav_files(directory)
    if not paths:
        raise ValueError(f"No .wav files in {directory}.")
    return [resample(read_wav(path), sample_rate) for path in paths]


def load_corpus(directory: Path, sample_rate: int) -> dict[str, list[AudioBuffer]]:
    """Read a ``<speaker>/<utterance>.wav`` tree, resampled to ``sample_rate``."""

    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"Corpus directory not found: {directory}")
    corpus = {}
    for speaker in sorted(entry for entry in directory.iterdir() if entry.is_dir()):
        if speaker.name.startswith("."):
            continue
        paths = wav_files(speaker)
        if paths:
            corpus[speaker.name] = [resample(read_wav(path), sample_rate) for path in paths]
    if not corpus:
        raise ValueError(f"Corpus {directory} has no speaker directories with .wav files.")
    return corpus


def save_corpus(directory: Path, corpus: dict[str, list[AudioBuffer]]) -> list[Path]:
    written = []
    for label in sorted(corpus):
        for index, buf in enumerate(corpus[label]):
            path = Path(directory) / label / f"{index:03d}{WAV_SUFFIX}"
            write_wav(path, buf)
            written.append(path)
    return written
