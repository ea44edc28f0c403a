from __future__ import annotations

import numpy as np
import pytest

from tubespoof.acoustics import Environment, TubeSpec
from tubespoof.synthetic import (
    VOICE_F0_HZ,
    VOICE_TILT_DB,
    build_planted_instance,
    filter_through,
    harmonic_signal,
    make_corpus,
    random_voice,
    stratified_voices,
    synthesize,
)


def test_corpus_is_seeded() -> None:
    first = make_corpus(2, 2, sample_rate=8000, duration_s=0.2, seed=11)
    second = make_corpus(2, 2, sample_rate=8000, duration_s=0.2, seed=11)
    other = make_corpus(2, 2, sample_rate=8000, duration_s=0.2, seed=12)
    assert sorted(first) == ["speaker_00", "speaker_01"]
    for label in first:
        for a, b in zip(first[label], second[label]):
            assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(first["speaker_00"][0].samples, other["speaker_00"][0].samples)


def test_synthesized_voice_level() -> None:
    rng = np.random.default_rng(0)
    voice = random_voice(rng, "v")
    assert 95.0 <= voice.f0_hz <= 260.0
    buf = synthesize(voice, 0.5, 16000, rng)
    assert len(buf) == 8000
    assert buf.rms() == pytest.approx(0.1, rel=0.05)
    assert np.abs(buf.samples).max() < 1.0


def test_harmonic_signal() -> None:
    buf = harmonic_signal(250.0, 4, 1.0, 8000)
    assert np.abs(buf.samples).max() == pytest.approx(0.5)
    spectrum = np.abs(np.fft.rfft(buf.samples))
    freqs = np.fft.rfftfreq(buf.samples.size, d=1 / 8000)
    top = sorted(freqs[np.argsort(spectrum)[-4:]])
    assert top == [250.0, 500.0, 750.0, 1000.0]
    with pytest.raises(ValueError):
        harmonic_signal(250.0, 4, 1.0, 8000, amplitudes=[1.0, 1.0])


def test_filter_through_keeps_shape() -> None:
    buffers = make_corpus(1, 2, sample_rate=8000, duration_s=0.2)["speaker_00"]
    filtered = filter_through(TubeSpec(0.5, 0.02), buffers, Environment())
    assert [len(buf) for buf in filtered] == [len(buf) for buf in buffers]
    assert filter_through(TubeSpec(0.5, 0.02), [], Environment()) == []


def test_planted_instance_layout() -> None:
    instance = build_planted_instance(3, natural_speakers=2, enrollment_utterances=4)
    assert instance.victim_label == "victim"
    assert instance.decoy_labels == ("decoy_120", "decoy_160", "decoy_260", "decoy_320")
    assert instance.natural_labels == ("speaker_00", "speaker_01")
    assert set(instance.model.labels) == {
        "attacker",
        "victim",
        *instance.decoy_labels,
        *instance.natural_labels,
    }
    assert len(instance.attack_utterances) == 3
    assert all(buf.sample_rate == 8000 for buf in instance.attack_utterances)
    assert len(instance.corpus["victim"]) == 4
    # Held-out attacker speech stays with the attacker until a tube is applied.
    labels = [instance.model.identify(buf)[0] for buf in instance.attack_utterances]
    assert labels.count("attacker") >= 2


@pytest.mark.parametrize("speakers", [1, 5, 12])
def test_stratified_voices_cover_separate_cells(speakers: int) -> None:
    voices = stratified_voices(speakers, np.random.default_rng(speakers))
    assert [voice.name for voice in voices] == [f"speaker_{i:02d}" for i in range(speakers)]
    low, high = VOICE_F0_HZ
    pitch_cells = [int((voice.f0_hz - low) / (high - low) * speakers) for voice in voices]
    assert pitch_cells == list(range(speakers))
    low, high = VOICE_TILT_DB
    tilts = [voice.tilt_db_per_octave for voice in voices]
    tilt_cells = [int((tilt - low) / (high - low) * speakers) for tilt in tilts]
    assert sorted(tilt_cells) == list(range(speakers))
