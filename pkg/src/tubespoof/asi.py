from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Protocol, Sequence

import numpy as np
from scipy import optimize
from scipy.fft import dct

from .audio import CLASSIFIER_RATES, AudioBuffer, frame_signal
from .run_log import RunLog, log_event
from .schema_check import load_schema, validate_or_raise

MODEL_SCHEMA_VERSION = 1
LOG_FLOOR = 1e-10
VAD_FLOOR_RATIO = 0.02
VAD_PERCENTILE = 95.0
TARGET_TOP1 = 0.8
MIN_SPEAKERS = 2
MIN_UTTERANCES = 3
INDISTINGUISHABLE = 1e-6
SCORE_TOLERANCE = 1e-9


class NoSpeechError(ValueError):
    pass


def hz_to_mel(freq: Any) -> Any:
    return 2595.0 * np.log10(1.0 + np.asarray(freq, dtype=np.float64) / 700.0)


def mel_to_hz(mel: Any) -> Any:
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class MfccConfig:
    sample_rate: int = 16000
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    n_mels: int = 24
    n_coeffs: int = 13
    fmin: float = 20.0
    fmax: float | None = None

    def __post_init__(self) -> None:
        if self.sample_rate not in CLASSIFIER_RATES:
            raise ValueError(
                f"MFCC sample rate must be one of {CLASSIFIER_RATES}, got {self.sample_rate}."
            )
        if self.n_coeffs > self.n_mels:
            raise ValueError("n_coeffs cannot exceed n_mels.")
        if not 0 <= self.fmin < self.upper_hz <= self.sample_rate / 2:
            raise ValueError("MFCC band needs 0 <= fmin < fmax <= Nyquist.")

    @property
    def upper_hz(self) -> float:
        return float(self.fmax) if self.fmax is not None else self.sample_rate / 2

    @property
    def frame_length(self) -> int:
        return int(round(self.frame_ms * self.sample_rate / 1000))

    @property
    def hop_length(self) -> int:
        return int(round(self.hop_ms * self.sample_rate / 1000))

    @property
    def n_fft(self) -> int:
        return 1 << (self.frame_length - 1).bit_length()

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "MfccConfig":
        fmax = data.get("fmax")
        return cls(
            sample_rate=int(data.get("sample_rate", 16000)),
            frame_ms=float(data.get("frame_ms", 25.0)),
            hop_ms=float(data.get("hop_ms", 10.0)),
            n_mels=int(data.get("n_mels", 24)),
            n_coeffs=int(data.get("n_coeffs", 13)),
            fmin=float(data.get("fmin", 20.0)),
            fmax=float(fmax) if fmax is not None else None,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "sample_rate": self.sample_rate,
            "frame_ms": self.frame_ms,
            "hop_ms": self.hop_ms,
            "n_mels": self.n_mels,
            "n_coeffs": self.n_coeffs,
            "fmin": self.fmin,
            "fmax": self.fmax,
        }


@dataclass(frozen=True, eq=False)
class Embedding:
    vector: np.ndarray

    def __post_init__(self) -> None:
        data = np.array(self.vector, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(data)):
            raise ValueError("Embedding entries must be finite.")
        data.setflags(write=False)
        object.__setattr__(self, "vector", data)

    @property
    def dimension(self) -> int:
        return int(self.vector.size)


@dataclass(frozen=True, eq=False)
class ScoreVector:
    labels: tuple[str, ...]
    scores: np.ndarray

    def __post_init__(self) -> None:
        data = np.array(self.scores, dtype=np.float64).reshape(-1)
        if data.size != len(self.labels):
            raise ValueError("Score count must equal label count.")
        if np.any(data < 0) or np.any(data > 1) or abs(data.sum() - 1.0) > SCORE_TOLERANCE:
            raise ValueError("Scores must lie in [0, 1] and sum to 1.")
        data.setflags(write=False)
        object.__setattr__(self, "scores", data)

    def score(self, label: str) -> float:
        try:
            return float(self.scores[self.labels.index(label)])
        except ValueError:
            raise KeyError(f"Unknown label: {label}") from None

    def top(self, count: int = 2) -> list[tuple[str, float]]:
        order = sorted(range(len(self.labels)), key=lambda i: (-self.scores[i], self.labels[i]))
        return [(self.labels[i], float(self.scores[i])) for i in order[:count]]

    def best_label(self) -> str:
        return self.top(1)[0][0]

    def to_dict(self) -> dict[str, float]:
        return {label: float(value) for label, value in zip(self.labels, self.scores)}


class SpeakerOracle(Protocol):
    """Anything that can be queried like a speaker-identification model."""

    @property
    def labels(self) -> tuple[str, ...]: ...

    def identify(self, buf: AudioBuffer) -> tuple[str, ScoreVector]: ...


@dataclass(frozen=True, eq=False)
class SpeakerModel:
    """Nearest-centroid speaker identifier over standardized MFCC statistics.

    ``center`` and ``scale`` are the per-dimension mean and spread of all
    enrollment embeddings; distances are measured after that standardization so
    that no single statistic dominates.
    """

    labels: tuple[str, ...]
    centroids: np.ndarray
    temperature: float
    mfcc: MfccConfig
    center: np.ndarray
    scale: np.ndarray
    warnings: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("Speaker labels must be unique.")
        if list(self.labels) != sorted(self.labels):
            raise ValueError("Speaker labels must be sorted.")
        centroids = np.array(self.centroids, dtype=np.float64)
        if centroids.ndim != 2 or centroids.shape[0] != len(self.labels):
            raise ValueError("Need exactly one centroid per label.")
        if not self.temperature > 0:
            raise ValueError("Temperature must be positive.")
        center = np.array(self.center, dtype=np.float64).reshape(-1)
        scale = np.array(self.scale, dtype=np.float64).reshape(-1)
        if center.size != centroids.shape[1] or scale.size != centroids.shape[1]:
            raise ValueError("Standardization vectors must match the centroid dimension.")
        if np.any(scale <= 0):
            raise ValueError("Standardization scale must be positive.")
        for name, value in (("centroids", centroids), ("center", center), ("scale", scale)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    def standardize(self, vector: np.ndarray) -> np.ndarray:
        return (np.asarray(vector, dtype=np.float64) - self.center) / self.scale

    def centroid(self, label: str) -> np.ndarray:
        if label not in self.labels:
            raise KeyError(f"Unknown speaker label: {label}")
        return self.centroids[self.labels.index(label)]

    def distances(self, embedding: Embedding) -> np.ndarray:
        if embedding.dimension != self.centroids.shape[1]:
            raise ValueError("Embedding dimension does not match the model.")
        z = self.standardize(embedding.vector)
        zc = (self.centroids - self.center) / self.scale
        return np.linalg.norm(zc - z[None, :], axis=1)

    def scores_for(self, embedding: Embedding, temperature: float | None = None) -> ScoreVector:
        logits = -self.distances(embedding) / (temperature or self.temperature)
        return ScoreVector(self.labels, _softmax(logits))

    def identify(self, buf: AudioBuffer) -> tuple[str, ScoreVector]:
        scores = self.scores_for(embed(buf, self.mfcc))
        # argmax picks the first maximum; labels are sorted.
        return self.labels[int(np.argmax(scores.scores))], scores

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": MODEL_SCHEMA_VERSION,
            "labels": list(self.labels),
            "centroids": self.centroids.tolist(),
            "temperature": self.temperature,
            "mfcc": self.mfcc.to_dict(),
            "center": self.center.tolist(),
            "scale": self.scale.tolist(),
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SpeakerModel":
        validate_or_raise(data, load_schema("speaker_model"), "speaker model")
        return cls(
            labels=tuple(data["labels"]),
            centroids=np.array(data["centroids"], dtype=np.float64),
            temperature=float(data["temperature"]),
            mfcc=MfccConfig.from_dict(data["mfcc"]),
            center=np.array(data["center"], dtype=np.float64),
            scale=np.array(data["scale"], dtype=np.float64),
            warnings=tuple(data.get("warnings", [])),
        )


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = np.exp(logits - logits.max())
    return shifted / shifted.sum()


def mel_filterbank(cfg: MfccConfig) -> np.ndarray:
    """Triangular HTK-mel weights, shape (n_mels, n_fft // 2 + 1)."""

    n_fft = cfg.n_fft
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / cfg.sample_rate)
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.upper_hz), cfg.n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lower) / (center - lower)
    falling = (upper - freqs[None, :]) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def mfcc(buf: AudioBuffer, cfg: MfccConfig) -> np.ndarray:
    if buf.sample_rate != cfg.sample_rate:
        raise ValueError(f"MFCC config expects {cfg.sample_rate} Hz, got {buf.sample_rate} Hz.")
    frame_length, hop = cfg.frame_length, cfg.hop_length
    if buf.samples.size < frame_length:
        raise ValueError(f"Need at least {frame_length} samples for one MFCC frame.")
    count = 1 + (buf.samples.size - frame_length) // hop
    frames = frame_signal(buf.samples[: (count - 1) * hop + frame_length], frame_length, hop)
    power = np.abs(np.fft.rfft(frames * np.hanning(frame_length), n=cfg.n_fft, axis=1)) ** 2
    energies = np.log(np.maximum(power @ mel_filterbank(cfg).T, LOG_FLOOR))
    return dct(energies, type=2, norm="ortho", axis=1)[:, : cfg.n_coeffs]


def vad_trim(
    buf: AudioBuffer,
    *,
    frame_ms: float = 25.0,
    hop_ms: float = 10.0,
    floor_ratio: float = VAD_FLOOR_RATIO,
) -> AudioBuffer:
    if buf.samples.size == 0:
        raise NoSpeechError("Empty buffer contains no speech.")
    frame_length = max(1, int(round(frame_ms * buf.sample_rate / 1000)))
    hop = max(1, int(round(hop_ms * buf.sample_rate / 1000)))
    frames = frame_signal(buf.samples, frame_length, hop)
    levels = np.sqrt(np.mean(frames**2, axis=1))
    reference = float(np.percentile(levels, VAD_PERCENTILE))
    if reference == 0.0:
        raise NoSpeechError("No speech detected: buffer is silent.")
    keep = np.flatnonzero(levels >= floor_ratio * reference)
    if keep.size == 0:
        raise NoSpeechError("No speech detected after voice activity filtering.")
    last = levels.size - 1
    pieces = [
        buf.samples[index * hop : (buf.samples.size if index == last else (index + 1) * hop)]
        for index in keep
    ]
    return AudioBuffer(np.concatenate(pieces), buf.sample_rate)


def embed(buf: AudioBuffer, cfg: MfccConfig) -> Embedding:
    coefficients = mfcc(vad_trim(buf), cfg)
    return Embedding(np.concatenate([coefficients.mean(axis=0), coefficients.std(axis=0)]))


def _mean_top1(distances: np.ndarray, temperature: float) -> float:
    logits = -distances / temperature
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    return float(probs.max(axis=1).mean())


def fit_temperature(distances: np.ndarray, target: float = TARGET_TOP1) -> float:
    """Temperature whose mean top-1 softmax score on ``distances`` hits ``target``."""

    spread = float(np.median(distances[distances > 0])) if np.any(distances > 0) else 1.0
    low, high = math.log(spread * 1e-6), math.log(spread * 1e6)

    def gap(log_temperature: float) -> float:
        return _mean_top1(distances, math.exp(log_temperature)) - target

    if gap(low) <= 0:
        return math.exp(low)
    if gap(high) >= 0:
        return math.exp(high)
    return math.exp(optimize.bisect(gap, low, high, xtol=1e-10))


def enroll(
    corpus: Mapping[str, Sequence[AudioBuffer]],
    cfg: MfccConfig,
    *,
    log: RunLog | None = None,
) -> SpeakerModel:
    if len(corpus) < MIN_SPEAKERS:
        raise ValueError(f"Enrollment needs at least {MIN_SPEAKERS} speakers.")
    for label, utterances in corpus.items():
        if len(utterances) < MIN_UTTERANCES:
            raise ValueError(
                f"Speaker {label!r} has {len(utterances)} utterances; need {MIN_UTTERANCES}."
            )

    labels = tuple(sorted(corpus))
    per_speaker = {label: [embed(buf, cfg).vector for buf in corpus[label]] for label in labels}
    stacked = np.vstack([vector for label in labels for vector in per_speaker[label]])
    center = stacked.mean(axis=0)
    scale = stacked.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    centroids = np.vstack([np.mean(per_speaker[label], axis=0) for label in labels])

    warnings: list[str] = []
    standardized = (centroids - center) / scale
    for i, first in enumerate(labels):
        for j in range(i + 1, len(labels)):
            if np.linalg.norm(standardized[i] - standardized[j]) < INDISTINGUISHABLE:
                message = f"Speakers {first!r} and {labels[j]!r} have indistinguishable centroids."
                warnings.append(message)
                log_event(log, "enroll_warning", {"message": message})

    z_utts = (stacked - center) / scale
    distances = np.linalg.norm(z_utts[:, None, :] - standardized[None, :, :], axis=2)
    temperature = fit_temperature(distances)
    achieved = _mean_top1(distances, temperature)
    log_event(log, "temperature_fit", {"temperature": temperature, "mean_top1": achieved})
    if not 0.6 <= achieved <= 0.95:
        warnings.append(f"Mean top-1 score {achieved:.3f} could not be fitted into [0.6, 0.95].")

    return SpeakerModel(
        labels=labels,
        centroids=centroids,
        temperature=temperature,
        mfcc=cfg,
        center=center,
        scale=scale,
        warnings=tuple(warnings),
    )


def identify(model: SpeakerModel, buf: AudioBuffer) -> tuple[str, ScoreVector]:
    return model.identify(buf)


def save_model(path: Path, model: SpeakerModel) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model.to_dict(), indent=2, sort_keys=True) + "\n")


def load_model(path: Path) -> SpeakerModel:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Speaker model not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"Speaker model {path} is not valid JSON: {exc}") from exc
    return SpeakerModel.from_dict(data)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    norm = float(np.linalg.norm(a) * np.linalg.norm(b))
    if norm == 0.0:
        return 0.0
    return float(np.clip(np.dot(a, b) / norm, -1.0, 1.0))
