"""Chirp self-test of a simulated tube against its theoretical resonances."""

from __future__ import annotations

from typing import Any

import numpy as np

from .acoustics import (
    DEFAULT_Q_DECAY,
    END_CORRECTION,
    Environment,
    ResonanceProfile,
    TubeSpec,
    fundamental_frequency,
    quality_factor,
    resonance_profile_single,
)
from .audio import AudioBuffer, chirp, cross_correlation, dtw_distance
from .filterbank import apply, band_energy_ratio, bank_from_profile
from .run_log import RunLog, log_event

DEFAULT_TOLERANCE = 0.01
END_CORRECTION_PERTURBATION = 0.01
PEAK_WINDOW = 0.05
NOISE_SEED = 0


def _perturbed_profile(
    profile: ResonanceProfile, tube: TubeSpec, env: Environment, perturbation: float
) -> ResonanceProfile:
    corrected = tube.length_m + END_CORRECTION * (1 + perturbation) * tube.diameter_m
    ratio = (env.c_air / (2 * corrected)) / fundamental_frequency(tube, env)
    harmonics = tuple(
        (f * ratio, q) for f, q in profile.harmonics if f * ratio < profile.nyquist_hz
    )
    return ResonanceProfile(harmonics=harmonics, nyquist_hz=profile.nyquist_hz)


def _measure_peak(
    freqs: np.ndarray, magnitude: np.ndarray, low: float, high: float
) -> tuple[float, bool]:
    (window,) = np.nonzero((freqs >= low) & (freqs <= high))
    index = int(window[np.argmax(magnitude[window])])
    interior = 0 < index < magnitude.size - 1 and low < freqs[index] < high
    local = (
        interior
        and magnitude[index] > magnitude[index - 1]
        and magnitude[index] > magnitude[index + 1]
    )
    return float(freqs[index]), bool(local)


def chirp_validation(
    tube: TubeSpec,
    env: Environment,
    *,
    model_env: Environment | None = None,
    sample_rate: int = 8000,
    duration_s: float = 3.0,
    f_start_hz: float = 100.0,
    f_end_hz: float = 3700.0,
    tolerance: float = DEFAULT_TOLERANCE,
    decay_exponent: float = DEFAULT_Q_DECAY,
    perturbation: float = END_CORRECTION_PERTURBATION,
    log: RunLog | None = None,
) -> dict[str, Any]:
    """Sweep a chirp through the tube's filter bank and locate the comb peaks.

    The bank is built under ``env``; the expected harmonics come from
    ``model_env`` (defaults to ``env``), so a temperature mismatch between the
    two shows up as a failed check.
    """

    model_env = model_env or env
    nyquist = sample_rate / 2
    profile = resonance_profile_single(tube, env, nyquist, decay_exponent=decay_exponent)
    bank = bank_from_profile(profile, sample_rate)
    sweep = chirp(duration_s, f_start_hz, f_end_hz, sample_rate)
    response = apply(bank, sweep)

    magnitude = np.abs(np.fft.rfft(response.samples))
    freqs = np.fft.rfftfreq(response.samples.size, d=1.0 / sample_rate)
    model_f0 = fundamental_frequency(tube, model_env)
    indices = range(1, int(f_end_hz // model_f0) + 1)
    expected = [model_f0 * i for i in indices if model_f0 * i < f_end_hz]

    peaks = []
    diagnostics = []
    for target in expected:
        half_width = min(PEAK_WINDOW * target, 0.4 * model_f0)
        measured, local = _measure_peak(freqs, magnitude, target - half_width, target + half_width)
        error = abs(measured - target) / target
        peaks.append(
            {
                "expected_hz": target,
                "measured_hz": measured,
                "relative_error": error,
                "local_maximum": local,
            }
        )
        if error > tolerance:
            diagnostics.append(
                f"Peak near {target:.2f} Hz measured at {measured:.2f} Hz "
                f"({100 * error:.2f}% off, tolerance {100 * tolerance:.2f}%)."
            )
        elif not local:
            diagnostics.append(f"No local maximum of the response near {target:.2f} Hz.")
    if not expected:
        diagnostics.append(f"No theoretical harmonic below {f_end_hz} Hz.")

    noise = AudioBuffer(np.random.default_rng(NOISE_SEED).standard_normal(len(sweep)), sample_rate)
    perturbed = _perturbed_profile(profile, tube, env, perturbation)
    shifted = apply(bank_from_profile(perturbed, sample_rate), sweep)
    lags, coeffs = cross_correlation(response, shifted)
    best = int(np.argmax(coeffs))

    status = "PASS" if not diagnostics else "FAIL"
    report = {
        "status": status,
        "tube": tube.to_dict(),
        "environment": env.to_dict(),
        "model_environment": model_env.to_dict(),
        "sample_rate": sample_rate,
        "chirp": {"duration_s": duration_s, "f_start_hz": f_start_hz, "f_end_hz": f_end_hz},
        "f0_hz": fundamental_frequency(tube, env),
        "q0": quality_factor(tube, env),
        "model_f0_hz": model_f0,
        "tolerance": tolerance,
        "peaks": peaks,
        "max_relative_error": max((peak["relative_error"] for peak in peaks), default=None),
        "band_energy_ratio": band_energy_ratio(apply(bank, noise), bank),
        "end_correction_check": {
            "perturbation": perturbation,
            "xcorr_peak": float(coeffs[best]),
            "xcorr_lag": int(lags[best]),
            "dtw_distance": dtw_distance(response, shifted),
        },
        "diagnostics": diagnostics,
    }
    log_event(
        log,
        "validation_result",
        {"status": status, "tube": tube.to_dict(), "diagnostics": diagnostics},
    )
    return report
