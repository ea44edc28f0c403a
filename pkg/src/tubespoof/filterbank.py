from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .acoustics import ResonanceProfile
from .audio import AudioBuffer, Spectrum, fft, ifft


@dataclass(frozen=True)
class BandPassFilterBank:
    """A sum of unit-peak two-pole resonators, one per tube harmonic.

    With ``magnitude_only`` the bank applies |H(f)| and leaves the input phase
    untouched.
    """

    bands: tuple[tuple[float, float], ...]
    sample_rate: int
    magnitude_only: bool = False

    def __post_init__(self) -> None:
        bands = tuple((float(center), float(q)) for center, q in self.bands)
        object.__setattr__(self, "bands", bands)
        if not bands:
            raise ValueError("Filter bank needs at least one band.")
        nyquist = self.sample_rate / 2
        for center, q in bands:
            if not 0 < center < nyquist:
                raise ValueError(f"Band center {center:.2f} Hz must lie in (0, {nyquist}) Hz.")
            if q <= 0:
                raise ValueError(f"Band Q must be positive, got {q}.")

    @property
    def centers(self) -> np.ndarray:
        return np.array([center for center, _ in self.bands])

    @property
    def qualities(self) -> np.ndarray:
        return np.array([q for _, q in self.bands])

    def bin_response(self, length: int) -> np.ndarray:
        """Full-length response on FFT bins; conjugate symmetric by construction."""

        freqs = np.fft.fftfreq(length, d=1.0 / self.sample_rate)
        response = transfer_function(self, freqs)
        if length % 2 == 0:
            response[length // 2] = response[length // 2].real
        if self.magnitude_only:
            response = np.abs(response).astype(np.complex128)
        return response

    def to_dict(self) -> dict[str, Any]:
        return {
            "bands": [{"center_hz": center, "q": q} for center, q in self.bands],
            "sample_rate": self.sample_rate,
            "magnitude_only": self.magnitude_only,
        }


def bank_from_profile(
    profile: ResonanceProfile, sample_rate: int, *, magnitude_only: bool = False
) -> BandPassFilterBank:
    if len(profile) == 0:
        raise ValueError(profile.warning or "Resonance profile is empty.")
    nyquist = sample_rate / 2
    bands = tuple((f, q) for f, q in profile.harmonics if f < nyquist)
    if not bands:
        raise ValueError(f"Every harmonic lies at or above Nyquist ({nyquist} Hz).")
    return BandPassFilterBank(bands=bands, sample_rate=sample_rate, magnitude_only=magnitude_only)


def transfer_function(bank: BandPassFilterBank, freqs: Any) -> np.ndarray:
    f = np.asarray(freqs, dtype=np.float64)
    total = np.zeros(f.shape, dtype=np.complex128)
    for center, q in bank.bands:
        damping = 1j * f * center / q
        total += damping / (center**2 - f**2 + damping)
    return total


def apply(bank: BandPassFilterBank, buf: AudioBuffer) -> AudioBuffer:
    if buf.sample_rate != bank.sample_rate:
        raise ValueError(
            f"Filter bank runs at {bank.sample_rate} Hz but input is {buf.sample_rate} Hz."
        )
    spectrum = fft(buf)
    shaped = Spectrum(
        bins=spectrum.bins * bank.bin_response(spectrum.origin_length),
        bin_resolution=spectrum.bin_resolution,
        origin_length=spectrum.origin_length,
        sample_rate=spectrum.sample_rate,
    )
    return ifft(shaped)


def band_energy_ratio(buf: AudioBuffer, bank: BandPassFilterBank) -> float:
    """Share of one-sided spectral energy inside the bands' half-power intervals."""

    if buf.sample_rate != bank.sample_rate:
        raise ValueError(
            f"Filter bank runs at {bank.sample_rate} Hz but input is {buf.sample_rate} Hz."
        )
    power = np.abs(np.fft.rfft(buf.samples)) ** 2
    total = float(power.sum())
    if total == 0:
        return 0.0
    freqs = np.fft.rfftfreq(buf.samples.size, d=1.0 / buf.sample_rate)
    inside = np.zeros(freqs.size, dtype=bool)
    for center, q in bank.bands:
        half_width = center / (2 * q)
        inside |= (freqs >= center - half_width) & (freqs <= center + half_width)
    return float(power[inside].sum() / total)
