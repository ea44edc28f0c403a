from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np
import polars as pl
from scipy import linalg, signal as sps, special

from .acoustics import DEFAULT_Q_DECAY, Environment, TubeSpec, resonance_profile_single
from .audio import AudioBuffer, frame_signal
from .filterbank import apply, bank_from_profile
from .run_log import RunLog, log_event

MIN_FRAME_LENGTH = 256
MAX_PEAKS = 60
MEDIAN_FACTOR = 4.0
PEAK_FLOOR_DB = -30.0
PEAK_NEIGHBORHOOD = 2

TRACK_FRAME_S = 0.064
TRACK_HOP_S = 0.016
VOICING_RMS = 0.01
# Lowest rate whose tracking frame still holds MIN_FRAME_LENGTH samples.
MIN_TRACK_RATE = 4000
MIN_COMMON_VOICED = 5

DEFAULT_MIN_HZ = 50.0
DEFAULT_MAX_HZ = 500.0
DEFAULT_STEP_HZ = 1.0

MIN_STUDY_TUBES = 3
MIN_STUDY_SIGNALS = 10


@dataclass(frozen=True, eq=False)
class SinePeaks:
    """Spectral peaks of one analysis frame, sorted by frequency (rad/sample)."""

    amplitudes: np.ndarray
    frequencies: np.ndarray
    phases: np.ndarray
    fft_size: int
    sample_rate: int

    def __post_init__(self) -> None:
        for name in ("amplitudes", "frequencies", "phases"):
            data = np.array(getattr(self, name), dtype=np.float64).reshape(-1)
            data.setflags(write=False)
            object.__setattr__(self, name, data)
        if not self.amplitudes.size == self.frequencies.size == self.phases.size:
            raise ValueError("Peak arrays must have equal length.")
        if np.any(np.diff(self.frequencies) <= 0):
            raise ValueError("Peak frequencies must be strictly increasing.")
        if np.any(self.amplitudes < 0):
            raise ValueError("Peak amplitudes must be non-negative.")

    def __len__(self) -> int:
        return int(self.frequencies.size)

    @property
    def bin_width(self) -> float:
        return 2 * np.pi / self.fft_size


@dataclass(frozen=True)
class PitchSearch:
    omega_min: float
    omega_max: float
    step: float

    def __post_init__(self) -> None:
        if not 0 < self.omega_min < self.omega_max < np.pi:
            raise ValueError("Pitch search needs 0 < omega_min < omega_max < pi.")
        if self.step <= 0:
            raise ValueError("Pitch search step must be positive.")

    @classmethod
    def from_hz(
        cls,
        sample_rate: int,
        min_hz: float = DEFAULT_MIN_HZ,
        max_hz: float = DEFAULT_MAX_HZ,
        step_hz: float = DEFAULT_STEP_HZ,
    ) -> "PitchSearch":
        nyquist = sample_rate / 2
        if not 0 < max_hz < nyquist:
            raise ValueError(
                f"Pitch ceiling {max_hz} Hz must lie below Nyquist ({nyquist} Hz) "
                f"at a sample rate of {sample_rate} Hz."
            )
        scale = 2 * np.pi / sample_rate
        return cls(min_hz * scale, max_hz * scale, step_hz * scale)

    def grid(self) -> np.ndarray:
        count = int(np.floor((self.omega_max - self.omega_min) / self.step + 1e-9)) + 1
        return self.omega_min + self.step * np.arange(count)


@dataclass(frozen=True)
class PitchTrack:
    frames: tuple[tuple[float, float | None], ...]

    def __post_init__(self) -> None:
        times = [time for time, _ in self.frames]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("Pitch track times must be strictly increasing.")

    def voiced(self) -> list[float]:
        return [pitch for _, pitch in self.frames if pitch is not None]


@dataclass(frozen=True)
class RegressionReport:
    coefficients: tuple[float, ...]
    r_squared: float
    p_values: tuple[float, ...]
    n_samples: int
    names: tuple[str, ...] = ()
    std_errors: tuple[float, ...] = ()
    t_values: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if len(self.coefficients) != len(self.p_values):
            raise ValueError("Coefficients and p-values must have the same arity.")
        if not 0.0 <= self.r_squared <= 1.0:
            raise ValueError(f"R^2 {self.r_squared} outside [0, 1].")

    def to_dict(self) -> dict[str, Any]:
        return {
            "coefficients": list(self.coefficients),
            "r_squared": self.r_squared,
            "p_values": list(self.p_values),
            "n_samples": self.n_samples,
            "names": list(self.names),
            "std_errors": list(self.std_errors),
            "t_values": [v if math.isfinite(v) else None for v in self.t_values],
        }


@dataclass(frozen=True)
class PitchShiftStudy:
    report: RegressionReport
    rows: list[dict[str, Any]] = field(default_factory=list)

    def to_frame(self) -> pl.DataFrame:
        return pl.DataFrame(
            self.rows,
            schema={
                "tube_L_m": pl.Float64,
                "tube_d_m": pl.Float64,
                "signal_id": pl.Utf8,
                "mean_shift_Hz": pl.Float64,
            },
        )


def omega_to_hz(omega: float, sample_rate: int) -> float:
    return float(omega * sample_rate / (2 * np.pi))


def stft_peaks(frame: AudioBuffer) -> SinePeaks:
    size = frame.samples.size
    if size < MIN_FRAME_LENGTH:
        raise ValueError(f"Analysis frame needs at least {MIN_FRAME_LENGTH} samples, got {size}.")
    window = np.hanning(size)
    spectrum = np.fft.rfft(frame.samples * window)
    magnitude = np.abs(spectrum)
    empty = SinePeaks(np.empty(0), np.empty(0), np.empty(0), size, frame.sample_rate)
    peak_level = float(magnitude.max())
    if peak_level == 0.0:
        return empty

    threshold = max(
        MEDIAN_FACTOR * float(np.median(magnitude)),
        peak_level * 10 ** (PEAK_FLOOR_DB / 20),
    )
    (candidates,) = sps.argrelmax(magnitude, order=PEAK_NEIGHBORHOOD)
    candidates = candidates[(candidates > 0) & (candidates < magnitude.size - 1)]
    candidates = candidates[magnitude[candidates] > threshold]
    if candidates.size == 0:
        return empty

    log_mag = np.log(np.maximum(magnitude, 1e-300))
    left = log_mag[candidates - 1]
    center = log_mag[candidates]
    right = log_mag[candidates + 1]
    curvature = left - 2 * center + right
    bending = curvature < 0
    offset = np.where(bending, 0.5 * (left - right) / np.where(bending, curvature, -1.0), 0.0)
    peak_log = center - 0.25 * (left - right) * offset
    amplitudes = 2 * np.exp(peak_log) / window.sum()
    frequencies = 2 * np.pi * (candidates + offset) / size
    phases = np.angle(spectrum[candidates])

    if candidates.size > MAX_PEAKS:
        keep = np.sort(np.argsort(amplitudes, kind="stable")[-MAX_PEAKS:])
        amplitudes, frequencies, phases = amplitudes[keep], frequencies[keep], phases[keep]
    return SinePeaks(amplitudes, frequencies, phases, size, frame.sample_rate)


def pitch_objective(peaks: SinePeaks, candidates: np.ndarray) -> np.ndarray:
    """Harmonic fit score for each candidate fundamental (rad/sample)."""

    omegas = np.asarray(candidates, dtype=np.float64)
    top = peaks.frequencies[-1] + peaks.bin_width / 2
    counts = np.floor(top / omegas).astype(np.int64)
    max_count = int(counts.max()) if counts.size else 0
    if max_count == 0:
        return np.zeros(omegas.size)
    harmonic_index = np.arange(1, max_count + 1)
    harmonics = omegas[:, None] * harmonic_index[None, :]
    active = harmonic_index[None, :] <= counts[:, None]
    envelope = np.interp(harmonics, peaks.frequencies, peaks.amplitudes)
    distance = (peaks.frequencies[None, None, :] - harmonics[:, :, None]) / peaks.bin_width
    fit = np.abs(np.sinc(distance)) @ peaks.amplitudes
    return np.sum(np.where(active, envelope * (fit - 0.5 * envelope), 0.0), axis=1)


def estimate_pitch(peaks: SinePeaks, search: PitchSearch | None = None) -> float:
    if len(peaks) == 0:
        raise ValueError("Cannot estimate pitch without spectral peaks.")
    search = search or PitchSearch.from_hz(peaks.sample_rate)
    candidates = search.grid()
    scores = pitch_objective(peaks, candidates)
    # argmax returns the first maximum, i.e. the lowest candidate on ties.
    return float(candidates[int(np.argmax(scores))])


def _frame_pitch(frame: np.ndarray, sample_rate: int, search: PitchSearch) -> float | None:
    if np.sqrt(np.mean(frame**2)) < VOICING_RMS:
        return None
    peaks = stft_peaks(AudioBuffer(frame, sample_rate))
    if len(peaks) == 0:
        return None
    return omega_to_hz(estimate_pitch(peaks, search), sample_rate)


def pitch_track(
    buf: AudioBuffer,
    *,
    search: PitchSearch | None = None,
    jobs: int = 1,
) -> PitchTrack:
    if buf.samples.size == 0:
        raise ValueError("Cannot track pitch of an empty buffer.")
    rate = buf.sample_rate
    if rate < MIN_TRACK_RATE:
        raise ValueError(
            f"Pitch tracking needs a sample rate of at least {MIN_TRACK_RATE} Hz, got {rate} Hz."
        )
    frame_length = int(round(TRACK_FRAME_S * rate))
    hop = int(round(TRACK_HOP_S * rate))
    frames = frame_signal(buf.samples, frame_length, hop)
    search = search or PitchSearch.from_hz(rate)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            pitches = list(pool.map(lambda f: _frame_pitch(f, rate, search), frames))
    else:
        pitches = [_frame_pitch(frame, rate, search) for frame in frames]
    return PitchTrack(
        frames=tuple((index * hop / rate, pitch) for index, pitch in enumerate(pitches))
    )


def _shift_between(original: PitchTrack, filtered: PitchTrack) -> float:
    shifts = [
        after - before
        for (_, before), (_, after) in zip(original.frames, filtered.frames)
        if before is not None and after is not None
    ]
    if len(shifts) < MIN_COMMON_VOICED:
        raise ValueError(
            f"Only {len(shifts)} frames are voiced in both signals; "
            f"need at least {MIN_COMMON_VOICED}."
        )
    return float(np.mean(shifts))


def mean_pitch_shift(
    original: AudioBuffer,
    filtered: AudioBuffer,
    *,
    search: PitchSearch | None = None,
    jobs: int = 1,
) -> float:
    if original.sample_rate != filtered.sample_rate:
        raise ValueError("Original and filtered audio must share a sample rate.")
    frame_length = int(round(TRACK_FRAME_S * original.sample_rate))
    if abs(original.samples.size - filtered.samples.size) > frame_length:
        raise ValueError("Original and filtered audio differ in duration by more than one frame.")
    return _shift_between(
        pitch_track(original, search=search, jobs=jobs),
        pitch_track(filtered, search=search, jobs=jobs),
    )


def ols_regression(
    design: Any,
    response: Any,
    names: Sequence[str] | None = None,
) -> RegressionReport:
    x = np.asarray(design, dtype=np.float64)
    y = np.asarray(response, dtype=np.float64).reshape(-1)
    if x.ndim != 2:
        raise ValueError("Design matrix must be two-dimensional.")
    rows, cols = x.shape
    if y.size != rows:
        raise ValueError(f"Response has {y.size} rows but design has {rows}.")
    if rows < cols + 1:
        raise ValueError(f"Need at least {cols + 1} observations for {cols} regressors.")

    q, r = np.linalg.qr(x)
    diagonal = np.abs(np.diag(r))
    if diagonal.min() <= 1e-10 * max(diagonal.max(), 1.0):
        raise ValueError("Design matrix is rank deficient.")
    coefficients = linalg.solve_triangular(r, q.T @ y)

    residuals = y - x @ coefficients
    ss_res = float(residuals @ residuals)
    centered = y - y.mean()
    ss_tot = float(centered @ centered)
    if ss_tot > 0:
        r_squared = 1.0 - ss_res / ss_tot
    else:
        r_squared = 1.0 if ss_res <= 1e-24 else 0.0
    r_squared = float(np.clip(r_squared, 0.0, 1.0))

    dof = rows - cols
    r_inv = linalg.solve_triangular(r, np.eye(cols))
    variance = ss_res / dof
    std_errors = np.sqrt(variance * np.sum(r_inv**2, axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        t_values = np.where(std_errors > 0, coefficients / std_errors, np.inf)
        p_values = special.betainc(dof / 2, 0.5, dof / (dof + t_values**2))
    p_values = np.where(
        std_errors > 0, p_values, np.where(coefficients == 0, 1.0, 0.0)
    )
    labels = tuple(names) if names is not None else tuple(f"x{i}" for i in range(cols))
    if len(labels) != cols:
        raise ValueError("Regressor names must match the design columns.")
    return RegressionReport(
        coefficients=tuple(float(v) for v in coefficients),
        r_squared=r_squared,
        p_values=tuple(float(np.clip(v, 0.0, 1.0)) for v in p_values),
        n_samples=rows,
        names=labels,
        std_errors=tuple(float(v) for v in std_errors),
        t_values=tuple(float(v) if np.isfinite(v) else float("inf") for v in t_values),
    )


def pitch_shift_study(
    signals: Sequence[AudioBuffer],
    tubes: Sequence[TubeSpec],
    env: Environment,
    *,
    signal_ids: Iterable[str] | None = None,
    decay_exponent: float = DEFAULT_Q_DECAY,
    jobs: int = 1,
    log: RunLog | None = None,
) -> PitchShiftStudy:
    if len(signals) < MIN_STUDY_SIGNALS:
        raise ValueError(f"Pitch-shift study needs at least {MIN_STUDY_SIGNALS} signals.")
    if len(tubes) < MIN_STUDY_TUBES:
        raise ValueError(f"Pitch-shift study needs at least {MIN_STUDY_TUBES} tubes.")
    ids = list(signal_ids) if signal_ids is not None else [f"s{i:03d}" for i in range(len(signals))]
    if len(ids) != len(signals):
        raise ValueError("Signal ids must match the signals.")

    rows: list[dict[str, Any]] = []
    for signal_id, buf in zip(ids, signals):
        original = pitch_track(buf, jobs=jobs)
        for tube in tubes:
            profile = resonance_profile_single(
                tube, env, buf.sample_rate / 2, decay_exponent=decay_exponent
            )
            filtered = apply(bank_from_profile(profile, buf.sample_rate), buf)
            # Level-match so the voicing gate ignores the tube's insertion loss.
            level = filtered.rms()
            if level > 0:
                filtered = filtered.scaled(buf.rms() / level)
            shift = _shift_between(original, pitch_track(filtered, jobs=jobs))
            rows.append(
                {
                    "tube_L_m": tube.length_m,
                    "tube_d_m": tube.diameter_m,
                    "signal_id": signal_id,
                    "mean_shift_Hz": shift,
                }
            )
            log_event(
                log,
                "study_pair",
                {"signal_id": signal_id, "tube": tube.to_dict(), "mean_shift_hz": shift},
            )

    frame = pl.DataFrame(rows)
    design = np.column_stack(
        [
            np.ones(frame.height),
            frame["tube_L_m"].to_numpy(),
            frame["tube_d_m"].to_numpy(),
        ]
    )
    report = ols_regression(
        design, frame["mean_shift_Hz"].to_numpy(), names=("intercept", "length_m", "diameter_m")
    )
    return PitchShiftStudy(report=report, rows=rows)
