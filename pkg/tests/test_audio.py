from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.io import wavfile

from tubespoof.audio import (
    AudioBuffer,
    chirp,
    cross_correlation,
    dtw_distance,
    fft,
    frame_signal,
    ifft,
    read_wav,
    resample,
    write_wav,
)

finite_samples = arrays(
    np.float64,
    st.integers(min_value=1, max_value=512),
    elements=st.floats(min_value=-1.0, max_value=1.0, allow_nan=False),
)


def _noise(seconds: float, rate: int, seed: int = 0) -> AudioBuffer:
    rng = np.random.default_rng(seed)
    return AudioBuffer(0.3 * rng.standard_normal(int(seconds * rate)), rate)


def test_audio_buffer_is_read_only() -> None:
    buf = AudioBuffer([0.0, 0.5, -0.5], 8000)
    with pytest.raises(ValueError):
        buf.samples[0] = 1.0
    assert len(buf) == 3
    assert buf.duration_s == pytest.approx(3 / 8000)


def test_audio_buffer_rejects_bad_rate() -> None:
    with pytest.raises(ValueError):
        AudioBuffer([0.0], 0)


def test_classifier_rate_check() -> None:
    AudioBuffer([0.0], 16000).require_classifier_rate()
    with pytest.raises(ValueError):
        AudioBuffer([0.0], 44100).require_classifier_rate()


def test_pcm16_round_trip_within_one_step(tmp_path: Path) -> None:
    buf = _noise(0.1, 16000)
    path = tmp_path / "noise.wav"
    write_wav(path, AudioBuffer(np.clip(buf.samples, -1, 1), 16000))

    loaded = read_wav(path)
    assert loaded.sample_rate == 16000
    assert len(loaded) == len(buf)
    assert np.max(np.abs(loaded.samples - np.clip(buf.samples, -1, 1))) <= 1 / 32768


def test_float32_round_trip(tmp_path: Path) -> None:
    buf = _noise(0.05, 8000, seed=1).scaled(0.5)
    path = tmp_path / "float.wav"
    write_wav(path, buf, subtype="float32")
    loaded = read_wav(path)
    assert np.allclose(loaded.samples, np.clip(buf.samples, -1, 1), atol=1e-7)


def test_read_wav_averages_channels(tmp_path: Path) -> None:
    path = tmp_path / "stereo.wav"
    left = np.full(100, 8192, dtype=np.int16)
    right = np.full(100, -8192, dtype=np.int16)
    wavfile.write(path, 8000, np.column_stack([left, right]))
    loaded = read_wav(path)
    assert np.allclose(loaded.samples, 0.0)


def test_read_wav_errors(tmp_path: Path) -> None:
    with pytest.raises(FileNotFoundError):
        read_wav(tmp_path / "missing.wav")

    path = tmp_path / "int32.wav"
    wavfile.write(path, 8000, np.arange(100, dtype=np.int32))
    with pytest.raises(ValueError):
        read_wav(path)


def test_write_wav_rejects_unknown_subtype(tmp_path: Path) -> None:
    with pytest.raises(ValueError):
        write_wav(tmp_path / "x.wav", AudioBuffer([0.1], 8000), subtype="mp3")


def test_resample_keeps_duration_and_tone() -> None:
    t = np.arange(16000) / 16000
    tone = AudioBuffer(0.5 * np.sin(2 * np.pi * 1000 * t), 16000)
    down = resample(tone, 8000)
    assert down.sample_rate == 8000
    assert len(down) == 8000
    spectrum = np.abs(np.fft.rfft(down.samples))
    assert np.argmax(spectrum) == 1000
    assert resample(tone, 16000) is tone


def test_chirp_shape_and_arguments() -> None:
    sweep = chirp(0.5, 100.0, 3000.0, 8000)
    assert len(sweep) == 4000
    assert sweep.samples[0] == pytest.approx(0.0)
    assert np.max(np.abs(sweep.samples)) <= 1.0
    with pytest.raises(ValueError):
        chirp(0.5, 100.0, 5000.0, 8000)
    with pytest.raises(ValueError):
        chirp(0.0, 100.0, 200.0, 8000)


@settings(max_examples=50, deadline=None)
@given(finite_samples)
def test_fft_round_trip(samples: np.ndarray) -> None:
    buf = AudioBuffer(samples, 8000)
    restored = ifft(fft(buf))
    assert restored.sample_rate == 8000
    assert np.allclose(restored.samples, buf.samples, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(finite_samples)
def test_fft_parseval(samples: np.ndarray) -> None:
    spectrum = fft(AudioBuffer(samples, 16000))
    energy = float(np.sum(samples**2))
    spectral = float(np.sum(spectrum.magnitude() ** 2)) / samples.size
    assert spectral == pytest.approx(energy, abs=1e-9)


def test_fft_rejects_empty_buffer() -> None:
    with pytest.raises(ValueError):
        fft(AudioBuffer([], 8000))


def test_frame_signal_pads_tail() -> None:
    frames = frame_signal(np.arange(10.0), 4, 2)
    assert frames.shape == (4, 4)
    assert frames[-1].tolist() == [6.0, 7.0, 8.0, 9.0]

    short = frame_signal(np.arange(3.0), 8, 4)
    assert short.shape == (1, 8)
    assert short[0, 3:].tolist() == [0.0] * 5


def test_autocorrelation_peaks_at_zero_lag() -> None:
    buf = _noise(0.1, 8000)
    lags, coeffs = cross_correlation(buf, buf)
    best = int(np.argmax(coeffs))
    assert lags[best] == 0
    assert coeffs[best] == pytest.approx(1.0)


def test_cross_correlation_positive_lag_when_b_trails() -> None:
    a = _noise(0.1, 8000, seed=3)
    b = AudioBuffer(np.concatenate([np.zeros(5), a.samples[:-5]]), 8000)
    lags, coeffs = cross_correlation(a, b)
    assert lags[int(np.argmax(coeffs))] == 5


def test_cross_correlation_of_silence_is_zero() -> None:
    lags, coeffs = cross_correlation(AudioBuffer(np.zeros(10), 8000), _noise(0.01, 8000))
    assert lags.size == coeffs.size
    assert not np.any(coeffs)


def test_dtw_identity_is_zero() -> None:
    buf = _noise(0.2, 8000)
    assert dtw_distance(buf, buf) == 0.0


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=10_000), st.integers(min_value=0, max_value=10_000))
def test_dtw_is_symmetric(first_seed: int, second_seed: int) -> None:
    a = _noise(0.15, 8000, seed=first_seed)
    b = _noise(0.2, 8000, seed=second_seed).scaled(0.5)
    assert dtw_distance(a, b) == dtw_distance(b, a)
    assert dtw_distance(a, b) >= 0.0


def test_dtw_rejects_mixed_rates() -> None:
    with pytest.raises(ValueError):
        dtw_distance(_noise(0.1, 8000), _noise(0.1, 16000))


def test_read_wav_scales_pcm16(tmp_path: Path) -> None:
    path = tmp_path / "scale.wav"
    wavfile.write(path, 8000, np.array([0, 16384, -32768], dtype=np.int16))
    assert read_wav(path).samples.tolist() == [0.0, 0.5, -1.0]


def test_resample_suppresses_aliasing() -> None:
    t = np.arange(16000) / 16000
    tone = AudioBuffer(np.sin(2 * np.pi * 7000 * t), 16000)
    assert resample(tone, 8000).rms() < 0.05


def test_cross_correlation_of_negated_signal() -> None:
    buf = _noise(0.1, 8000, seed=8)
    lags, coeffs = cross_correlation(buf, buf.scaled(-1.0))
    lowest = int(np.argmin(coeffs))
    assert lags[lowest] == 0
    assert coeffs[lowest] == pytest.approx(-1.0)


def test_cross_correlation_finds_long_delay() -> None:
    a = _noise(0.25, 8000, seed=9)
    b = AudioBuffer(np.concatenate([np.zeros(100), a.samples[:-100]]), 8000)
    lags, coeffs = cross_correlation(a, b)
    assert abs(lags[int(np.argmax(coeffs))] - 100) <= 1


def test_dtw_prefers_stretched_copy_over_noise() -> None:
    rate = 8000
    t = np.arange(rate) / rate
    speech = np.sin(2 * np.pi * 220 * t) * (0.55 - 0.45 * np.cos(2 * np.pi * 3 * t))
    x = AudioBuffer(0.5 * speech, rate)
    stretched_t = np.arange(int(1.05 * rate)) / (1.05 * rate)
    stretched = AudioBuffer(np.interp(stretched_t, t, x.samples), rate)
    noise = AudioBuffer(
        np.random.default_rng(4).normal(0.0, x.rms(), len(stretched)), rate
    )
    assert dtw_distance(x, stretched) < dtw_distance(x, noise)
