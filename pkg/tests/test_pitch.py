from __future__ import annotations

import numpy as np
import polars as pl
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tubespoof.acoustics import REFERENCE_TUBES, Environment, TubeSpec
from tubespoof.audio import AudioBuffer
from tubespoof.filterbank import BandPassFilterBank, apply
from tubespoof.pitch import (
    PitchSearch,
    PitchTrack,
    SinePeaks,
    estimate_pitch,
    mean_pitch_shift,
    ols_regression,
    omega_to_hz,
    pitch_shift_study,
    pitch_track,
    stft_peaks,
)
from tubespoof.synthetic import harmonic_signal, pitch_study_corpus

ENV = Environment(303.0)


def _series(seed: int, rate: int = 8000, seconds: float = 0.5) -> AudioBuffer:
    return harmonic_signal(200.0, 6, seconds, rate, rng=np.random.default_rng(seed))


def test_pitch_search_grid() -> None:
    search = PitchSearch.from_hz(8000, 50.0, 500.0, 1.0)
    grid = search.grid()
    assert grid.size == 451
    assert omega_to_hz(grid[0], 8000) == pytest.approx(50.0)
    assert omega_to_hz(grid[-1], 8000) == pytest.approx(500.0)
    with pytest.raises(ValueError):
        PitchSearch(0.5, 0.1, 0.01)
    with pytest.raises(ValueError):
        PitchSearch(0.1, 0.5, 0.0)


def test_stft_peaks_rejects_short_frames() -> None:
    with pytest.raises(ValueError):
        stft_peaks(AudioBuffer(np.ones(100), 8000))


def test_silence_has_no_peaks() -> None:
    peaks = stft_peaks(AudioBuffer(np.zeros(512), 8000))
    assert len(peaks) == 0
    with pytest.raises(ValueError):
        estimate_pitch(peaks)


def test_stft_peaks_locate_a_tone() -> None:
    rate = 16000
    t = np.arange(2048) / rate
    peaks = stft_peaks(AudioBuffer(0.4 * np.sin(2 * np.pi * 1234.5 * t), rate))
    assert len(peaks) == 1
    assert omega_to_hz(peaks.frequencies[0], rate) == pytest.approx(1234.5, abs=0.5)
    assert peaks.amplitudes[0] == pytest.approx(0.4, rel=0.05)


def test_harmonic_signals_within_one_hertz() -> None:
    rng = np.random.default_rng(2024)
    rate = 16000
    search = PitchSearch.from_hz(rate, step_hz=0.25)
    hits = 0
    for _ in range(50):
        f0 = rng.uniform(80.0, 400.0)
        harmonics = int(rng.integers(3, 13))
        signal = harmonic_signal(f0, harmonics, 0.2, rate, snr_db=30.0, rng=rng)
        frame = AudioBuffer(signal.samples[:2048], rate)
        estimate = omega_to_hz(estimate_pitch(stft_peaks(frame), search), rate)
        hits += abs(estimate - f0) <= 1.0
    assert hits >= 48


def test_pitch_track_marks_silence_unvoiced() -> None:
    voiced = _series(0)
    samples = np.concatenate([np.zeros(2000), voiced.samples])
    track = pitch_track(AudioBuffer(samples, 8000))
    assert track.frames[0][1] is None
    assert track.voiced()
    assert np.median(track.voiced()) == pytest.approx(200.0, abs=1.0)


def test_pitch_track_jobs_do_not_change_result() -> None:
    buf = _series(3)
    assert pitch_track(buf, jobs=3) == pitch_track(buf, jobs=1)


def test_pitch_track_rejects_empty_audio() -> None:
    with pytest.raises(ValueError):
        pitch_track(AudioBuffer([], 8000))
    with pytest.raises(ValueError):
        PitchTrack(frames=((0.1, None), (0.0, None)))


def test_bank_without_fundamental_doubles_pitch() -> None:
    buf = _series(1)
    bands = ((400.0, 50.0), (800.0, 50.0), (1200.0, 50.0))
    bank = BandPassFilterBank(bands=bands, sample_rate=8000)
    assert mean_pitch_shift(buf, apply(bank, buf)) > 100.0


def test_aligned_bank_keeps_pitch() -> None:
    buf = _series(2)
    bands = tuple((200.0 * k, 50.0) for k in range(1, 7))
    bank = BandPassFilterBank(bands=bands, sample_rate=8000)
    assert abs(mean_pitch_shift(buf, apply(bank, buf))) < 2.0


def test_mean_pitch_shift_needs_matching_audio() -> None:
    buf = _series(4)
    with pytest.raises(ValueError):
        mean_pitch_shift(buf, AudioBuffer(buf.samples, 16000))
    with pytest.raises(ValueError):
        mean_pitch_shift(buf, AudioBuffer(buf.samples[:1000], 8000))
    # Too little voiced overlap.
    with pytest.raises(ValueError):
        mean_pitch_shift(buf, AudioBuffer(np.zeros(len(buf)), 8000))


def test_ols_recovers_exact_line() -> None:
    x = np.linspace(0.0, 1.0, 20)
    design = np.column_stack([np.ones_like(x), x])
    report = ols_regression(design, 3.0 - 2.0 * x, names=("intercept", "slope"))
    assert report.coefficients == pytest.approx((3.0, -2.0))
    assert report.r_squared == pytest.approx(1.0)
    assert report.names == ("intercept", "slope")
    assert report.to_dict()["n_samples"] == 20


def test_ols_planted_effect_is_significant() -> None:
    rng = np.random.default_rng(9)
    x = rng.uniform(0.0, 1.0, size=200)
    noise = rng.uniform(0.0, 1.0, size=200)
    y = 5.0 * x + rng.normal(0.0, 0.5, size=200)
    report = ols_regression(np.column_stack([np.ones_like(x), x, noise]), y)
    assert report.coefficients[1] == pytest.approx(5.0, abs=0.5)
    assert report.p_values[1] < 1e-6
    assert report.r_squared > 0.5
    assert all(0.0 <= p <= 1.0 for p in report.p_values)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_ols_extra_regressor_never_lowers_r_squared(seed: int) -> None:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(30, 2))
    y = rng.normal(size=30)
    base = np.column_stack([np.ones(30), x[:, 0]])
    full = np.column_stack([base, x[:, 1]])
    assert ols_regression(full, y).r_squared >= ols_regression(base, y).r_squared - 1e-12


def test_ols_rejects_bad_designs() -> None:
    x = np.arange(10.0)
    with pytest.raises(ValueError):
        ols_regression(np.column_stack([np.ones(10), x, 2 * x]), x)
    with pytest.raises(ValueError):
        ols_regression(np.column_stack([np.ones(2), [1.0, 2.0]]), [1.0, 2.0])
    with pytest.raises(ValueError):
        ols_regression(x, x)
    with pytest.raises(ValueError):
        ols_regression(np.column_stack([np.ones(10), x]), x, names=("only",))


def _tuned_tube(f0_hz: float, diameter: float) -> TubeSpec:
    return TubeSpec(ENV.c_air / (2 * f0_hz) - 0.8 * diameter, diameter)


def test_pitch_shift_study_finds_length_effect() -> None:
    signals = [_series(seed, seconds=0.3) for seed in range(10)]
    tubes = [
        _tuned_tube(400.0, 0.02),
        _tuned_tube(400.0, 0.03),
        _tuned_tube(200.0, 0.02),
        _tuned_tube(200.0, 0.03),
    ]
    study = pitch_shift_study(signals, tubes, ENV)
    report = study.report
    assert report.n_samples == 40
    assert report.names == ("intercept", "length_m", "diameter_m")
    assert report.r_squared > 0.1
    assert min(report.p_values[1:]) < 0.01
    assert report.coefficients[1] < 0

    frame = study.to_frame()
    assert frame.columns == ["tube_L_m", "tube_d_m", "signal_id", "mean_shift_Hz"]
    shifts = frame.group_by("tube_L_m").agg(pl.col("mean_shift_Hz").mean().alias("shift"))
    short = shifts.filter(pl.col("tube_L_m") < 0.5)["shift"].to_list()
    assert all(value > 100.0 for value in short)


def test_pitch_shift_study_minimums() -> None:
    signals = [_series(seed, seconds=0.3) for seed in range(10)]
    tubes = [_tuned_tube(400.0, 0.02), _tuned_tube(200.0, 0.02)]
    with pytest.raises(ValueError):
        pitch_shift_study(signals, tubes, ENV)
    with pytest.raises(ValueError):
        pitch_shift_study(signals[:5], tubes + [_tuned_tube(300.0, 0.02)], ENV)


def test_reference_tube_study_on_random_voices() -> None:
    signals = pitch_study_corpus(50, sample_rate=8000, seed=0)
    tubes = [TubeSpec(length, diameter) for length, diameter, _ in REFERENCE_TUBES.values()]
    study = pitch_shift_study(signals, tubes, ENV, jobs=4)
    report = study.report
    assert report.n_samples == 300
    assert report.names == ("intercept", "length_m", "diameter_m")
    assert all(0.0 <= p <= 1.0 for p in report.p_values)

    frame = study.to_frame()
    assert frame.height == 300
    assert frame.group_by("tube_L_m").len()["len"].to_list() == [50] * 6
    assert frame["mean_shift_Hz"].is_finite().all()
    design = np.column_stack(
        [np.ones(300), frame["tube_L_m"].to_numpy(), frame["tube_d_m"].to_numpy()]
    )
    refit = ols_regression(design, frame["mean_shift_Hz"].to_numpy())
    assert refit.coefficients == pytest.approx(report.coefficients)
    assert refit.r_squared == pytest.approx(report.r_squared)
    largest = frame.group_by("tube_L_m").agg(pl.col("mean_shift_Hz").abs().max().alias("top"))
    assert all(value > 1.0 for value in largest["top"].to_list())


def test_pitch_study_corpus_spans_the_pitch_range() -> None:
    signals = pitch_study_corpus(20, sample_rate=8000, seed=4)
    assert len(signals) == 20
    assert all(len(buf) == 4000 and buf.sample_rate == 8000 for buf in signals)
    again = pitch_study_corpus(20, sample_rate=8000, seed=4)
    assert np.array_equal(again[7].samples, signals[7].samples)
    estimates = [float(np.median(pitch_track(buf).voiced())) for buf in signals[:5]]
    assert all(119.0 <= value <= 281.0 for value in estimates)


def _frame_peaks(gains: dict[float, float], rate: int = 16000, size: int = 2048) -> SinePeaks:
    t = np.arange(size) / rate
    samples = np.zeros(size)
    for freq, gain in gains.items():
        samples += gain * np.sin(2 * np.pi * freq * t + 0.3 * freq)
    return stft_peaks(AudioBuffer(samples, rate))


def test_three_sines_keep_amplitude_ratios() -> None:
    peaks = _frame_peaks({500.0: 1.0, 1510.0: 0.5, 3120.0: 0.25})
    assert len(peaks) == 3
    located = [omega_to_hz(omega, 16000) for omega in peaks.frequencies]
    assert located == pytest.approx([500.0, 1510.0, 3120.0], abs=1.0)
    ratios = peaks.amplitudes[1:] / peaks.amplitudes[0]
    assert ratios == pytest.approx([0.5, 0.25], rel=0.05)


@pytest.mark.parametrize("orders", [tuple(range(1, 9)), (1, 3, 5, 7)])
def test_fundamental_found_from_harmonic_subset(orders: tuple[int, ...]) -> None:
    peaks = _frame_peaks({200.0 * k: 1.0 for k in orders})
    search = PitchSearch.from_hz(16000)
    assert omega_to_hz(estimate_pitch(peaks, search), 16000) == pytest.approx(200.0, abs=1.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(min_value=1e-3, max_value=1e3), st.integers(min_value=0, max_value=1000))
def test_estimate_pitch_ignores_overall_level(scale: float, seed: int) -> None:
    rng = np.random.default_rng(seed)
    f0 = rng.uniform(90.0, 400.0)
    signal = harmonic_signal(f0, int(rng.integers(3, 10)), 0.2, 16000, snr_db=30.0, rng=rng)
    peaks = stft_peaks(AudioBuffer(signal.samples[:2048], 16000))
    louder = SinePeaks(
        peaks.amplitudes * scale, peaks.frequencies, peaks.phases, peaks.fft_size, 16000
    )
    assert estimate_pitch(louder) == estimate_pitch(peaks)


def test_low_rates_are_named_in_errors() -> None:
    with pytest.raises(ValueError, match="800 Hz"):
        PitchSearch.from_hz(800)
    with pytest.raises(ValueError, match="800 Hz"):
        pitch_track(AudioBuffer(np.ones(800), 800))
    assert PitchSearch.from_hz(4000).grid().size == 451
