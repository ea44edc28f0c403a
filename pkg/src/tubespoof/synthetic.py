"""Deterministic synthetic voices, corpora and planted attack instances.

Voices are harmonic sources with vibrato, a spectral tilt, a few formant
bumps and a syllabic amplitude envelope. They are crude, but different
speakers land in clearly different places of MFCC space, which is all the
surrogate identifier and the attack tests need.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .acoustics import Environment, TubeSpec, resonance_profile_single, tube_from_resonance
from .asi import MfccConfig, SpeakerModel, enroll
from .audio import AudioBuffer
from .filterbank import apply, bank_from_profile

TARGET_RMS = 0.1
NOISE_LEVEL = 0.003
VOICE_F0_HZ = (95.0, 260.0)
VOICE_TILT_DB = (-12.0, -3.0)
STUDY_F0_HZ = (120.0, 280.0)

ATTACKER_LABEL = "attacker"
VICTIM_LABEL = "victim"


@dataclass(frozen=True)
class VoiceProfile:
    name: str
    f0_hz: float
    tilt_db_per_octave: float
    formants: tuple[tuple[float, float, float], ...]
    vibrato_hz: float = 5.0
    vibrato_depth: float = 0.01
    syllable_rate_hz: float = 4.0


def random_voice(rng: np.random.Generator, name: str) -> VoiceProfile:
    f1 = rng.uniform(300.0, 850.0)
    f2 = rng.uniform(max(f1 + 400.0, 900.0), 2400.0)
    f3 = rng.uniform(max(f2 + 300.0, 2200.0), 3400.0)
    return VoiceProfile(
        name=name,
        f0_hz=float(rng.uniform(*VOICE_F0_HZ)),
        tilt_db_per_octave=float(rng.uniform(*VOICE_TILT_DB)),
        formants=(
            (float(f1), float(rng.uniform(60.0, 120.0)), float(rng.uniform(12.0, 20.0))),
            (float(f2), float(rng.uniform(80.0, 160.0)), float(rng.uniform(8.0, 16.0))),
            (float(f3), float(rng.uniform(120.0, 220.0)), float(rng.uniform(4.0, 10.0))),
        ),
        vibrato_hz=float(rng.uniform(4.0, 6.5)),
        vibrato_depth=float(rng.uniform(0.005, 0.02)),
        syllable_rate_hz=float(rng.uniform(3.0, 5.5)),
    )


def formant_gain(voice: VoiceProfile, freqs: np.ndarray) -> np.ndarray:
    gain = np.ones_like(freqs)
    for center, bandwidth, boost_db in voice.formants:
        gain += (10 ** (boost_db / 20) - 1) / (1 + ((freqs - center) / bandwidth) ** 2)
    return gain


def synthesize(
    voice: VoiceProfile,
    duration_s: float,
    sample_rate: int,
    rng: np.random.Generator,
) -> AudioBuffer:
    count = int(round(duration_s * sample_rate))
    t = np.arange(count) / sample_rate
    base = voice.f0_hz * rng.uniform(0.97, 1.03)
    vibrato_phase = rng.uniform(0, 2 * np.pi)
    vibrato = voice.vibrato_depth * np.sin(2 * np.pi * voice.vibrato_hz * t + vibrato_phase)
    glide = rng.uniform(-0.03, 0.03) * t / max(duration_s, 1e-9)
    f0_track = base * (1 + vibrato + glide)
    phase = 2 * np.pi * np.cumsum(f0_track) / sample_rate

    harmonics = int((0.95 * sample_rate / 2) // (base * 1.05))
    index = np.arange(1, harmonics + 1)
    nominal = index * base
    tilt = index ** (voice.tilt_db_per_octave / (20 * np.log10(2)))
    amplitudes = tilt * formant_gain(voice, nominal)
    offsets = rng.uniform(0, 2 * np.pi, size=harmonics)
    voiced = np.sin(index[:, None] * phase[None, :] + offsets[:, None]).T @ amplitudes

    syllables = 0.55 - 0.45 * np.cos(
        2 * np.pi * voice.syllable_rate_hz * t + rng.uniform(0, 2 * np.pi)
    )
    samples = voiced * syllables
    samples = samples / np.sqrt(np.mean(samples**2)) * TARGET_RMS
    samples = samples + NOISE_LEVEL * rng.standard_normal(count)
    return AudioBuffer(samples, sample_rate)


def harmonic_signal(
    f0_hz: float,
    harmonics: int,
    duration_s: float,
    sample_rate: int,
    *,
    amplitudes: Sequence[float] | None = None,
    snr_db: float | None = None,
    rng: np.random.Generator | None = None,
    level: float = 0.5,
) -> AudioBuffer:
    """Stationary harmonic series; optional white noise at ``snr_db``."""

    rng = rng or np.random.default_rng(0)
    t = np.arange(int(round(duration_s * sample_rate))) / sample_rate
    gains = np.ones(harmonics) if amplitudes is None else np.asarray(amplitudes, dtype=np.float64)
    if gains.size != harmonics:
        raise ValueError("Need one amplitude per harmonic.")
    samples = np.zeros_like(t)
    for k, gain in enumerate(gains, start=1):
        samples += gain * np.sin(2 * np.pi * k * f0_hz * t + rng.uniform(0, 2 * np.pi))
    samples *= level / np.max(np.abs(samples))
    if snr_db is not None:
        noise_power = np.mean(samples**2) / 10 ** (snr_db / 10)
        samples = samples + np.sqrt(noise_power) * rng.standard_normal(samples.size)
    return AudioBuffer(samples, sample_rate)


def stratified_voices(
    speakers: int, rng: np.random.Generator, prefix: str = "speaker"
) -> list[VoiceProfile]:
    """Random voices whose pitch and tilt come from separate strata of their ranges.

    Voice ``i`` takes its pitch from the ``i``-th of ``speakers`` equal cells
    of the pitch range and its tilt from a shuffled cell of the tilt range, so
    no two voices share both.
    """

    pitch_cells = (np.arange(speakers) + rng.uniform(0.25, 0.75, speakers)) / max(speakers, 1)
    tilt_cells = (rng.permutation(speakers) + rng.uniform(0.25, 0.75, speakers)) / max(speakers, 1)
    return [
        replace(
            random_voice(rng, f"{prefix}_{index:02d}"),
            f0_hz=float(_within(VOICE_F0_HZ, pitch_cells[index])),
            tilt_db_per_octave=float(_within(VOICE_TILT_DB, tilt_cells[index])),
        )
        for index in range(speakers)
    ]


def _within(bounds: tuple[float, float], fraction: float) -> float:
    low, high = bounds
    return low + (high - low) * fraction


def make_corpus(
    speakers: int,
    utterances: int,
    *,
    sample_rate: int = 16000,
    duration_s: float = 0.5,
    seed: int = 0,
    prefix: str = "speaker",
) -> dict[str, list[AudioBuffer]]:
    rng = np.random.default_rng(seed)
    return {
        voice.name: [synthesize(voice, duration_s, sample_rate, rng) for _ in range(utterances)]
        for voice in stratified_voices(speakers, rng, prefix)
    }


def pitch_study_corpus(
    count: int = 50,
    *,
    sample_rate: int = 8000,
    duration_s: float = 0.5,
    f0_range_hz: tuple[float, float] = STUDY_F0_HZ,
    seed: int = 0,
) -> list[AudioBuffer]:
    """Equal-amplitude harmonic series with uniform random pitch, harmonics up to 0.9 Nyquist."""

    rng = np.random.default_rng(seed)
    signals = []
    for _ in range(count):
        f0 = float(rng.uniform(*f0_range_hz))
        harmonics = max(1, int(0.45 * sample_rate // f0))
        signals.append(harmonic_signal(f0, harmonics, duration_s, sample_rate, rng=rng))
    return signals


def filter_through(
    tube: TubeSpec, utterances: Sequence[AudioBuffer], env: Environment
) -> list[AudioBuffer]:
    if not utterances:
        return []
    rate = utterances[0].sample_rate
    bank = bank_from_profile(resonance_profile_single(tube, env, rate / 2), rate)
    return [apply(bank, utt) for utt in utterances]


@dataclass(frozen=True)
class PlantedInstance:
    """An enrolled model whose victim is the attacker heard through a known tube."""

    model: SpeakerModel
    attacker_label: str
    victim_label: str
    victim_f0_hz: float
    victim_q0: float
    victim_tube: TubeSpec
    decoy_labels: tuple[str, ...]
    natural_labels: tuple[str, ...]
    attack_utterances: tuple[AudioBuffer, ...]
    clean_utterances: tuple[AudioBuffer, ...]
    corpus: dict[str, list[AudioBuffer]]


def build_planted_instance(
    seed: int,
    *,
    sample_rate: int = 8000,
    duration_s: float = 0.5,
    victim_f0_hz: float = 200.0,
    victim_q0: float = 50.0,
    decoy_f0s_hz: Sequence[float] = (120.0, 160.0, 260.0, 320.0),
    natural_speakers: int = 3,
    enrollment_utterances: int = 6,
    attack_utterances: int = 3,
    env: Environment | None = None,
) -> PlantedInstance:
    env = env or Environment()
    rng = np.random.default_rng(seed)
    attacker = random_voice(rng, ATTACKER_LABEL)
    own = [synthesize(attacker, duration_s, sample_rate, rng) for _ in range(enrollment_utterances)]
    held_out = [
        synthesize(attacker, duration_s, sample_rate, rng) for _ in range(attack_utterances)
    ]

    victim_tube = tube_from_resonance(victim_f0_hz, victim_q0, env).tube
    corpus: dict[str, list[AudioBuffer]] = {
        ATTACKER_LABEL: own,
        VICTIM_LABEL: filter_through(victim_tube, own, env),
    }
    decoys = []
    for f0 in decoy_f0s_hz:
        label = f"decoy_{int(round(f0))}"
        corpus[label] = filter_through(tube_from_resonance(f0, victim_q0, env).tube, own, env)
        decoys.append(label)
    naturals = []
    for index in range(natural_speakers):
        voice = random_voice(rng, f"speaker_{index:02d}")
        corpus[voice.name] = [
            synthesize(voice, duration_s, sample_rate, rng) for _ in range(enrollment_utterances)
        ]
        naturals.append(voice.name)

    model = enroll(corpus, MfccConfig(sample_rate=sample_rate))
    return PlantedInstance(
        model=model,
        attacker_label=ATTACKER_LABEL,
        victim_label=VICTIM_LABEL,
        victim_f0_hz=victim_f0_hz,
        victim_q0=victim_q0,
        victim_tube=victim_tube,
        decoy_labels=tuple(decoys),
        natural_labels=tuple(naturals),
        attack_utterances=tuple(held_out),
        clean_utterances=tuple(own),
        corpus=corpus,
    )
