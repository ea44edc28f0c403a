from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps
from scipy.io import wavfile

CLASSIFIER_RATES: tuple[int, ...] = (8000, 16000)
PCM_SCALE = 32768.0
ENVELOPE_FRAME_S = 0.025
ENVELOPE_HOP_S = 0.010


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    """Mono samples plus their sample rate.

    The sample array is copied to float64 and locked read-only, so a buffer can
    be handed to any thread without defensive copies.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        if int(self.sample_rate) <= 0:
            raise ValueError(f"Sample rate must be positive, got {self.sample_rate}.")
        data = np.array(self.samples, dtype=np.float64).reshape(-1)
        data.setflags(write=False)
        object.__setattr__(self, "samples", data)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate

    def rms(self) -> float:
        if self.samples.size == 0:
            return 0.0
        return float(np.sqrt(np.mean(self.samples**2)))

    def scaled(self, gain: float) -> "AudioBuffer":
        return AudioBuffer(self.samples * gain, self.sample_rate)

    def require_classifier_rate(self) -> None:
        if self.sample_rate not in CLASSIFIER_RATES:
            raise ValueError(
                f"Classifier input must be sampled at one of {CLASSIFIER_RATES} Hz, "
                f"got {self.sample_rate}."
            )


@dataclass(frozen=True, eq=False)
class Spectrum:
    bins: np.ndarray
    bin_resolution: float
    origin_length: int
    sample_rate: int

    def __post_init__(self) -> None:
        data = np.array(self.bins, dtype=np.complex128).reshape(-1)
        if data.size != self.origin_length:
            raise ValueError(
                f"Spectrum has {data.size} bins but origin length {self.origin_length}."
            )
        data.setflags(write=False)
        object.__setattr__(self, "bins", data)

    def frequencies(self) -> np.ndarray:
        """Signed bin frequencies in Hz, in numpy FFT order."""
        return np.fft.fftfreq(self.origin_length, d=1.0 / self.sample_rate)

    def magnitude(self) -> np.ndarray:
        return np.abs(self.bins)


def _require_samples(buf: AudioBuffer, name: str = "buffer") -> None:
    if buf.samples.size == 0:
        raise ValueError(f"Audio {name} is empty.")


def _require_same_rate(a: AudioBuffer, b: AudioBuffer) -> None:
    if a.sample_rate != b.sample_rate:
        raise ValueError(f"Sample rates differ: {a.sample_rate} vs {b.sample_rate}.")


def read_wav(path: Path) -> AudioBuffer:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"WAV file not found: {path}")
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise ValueError(f"Unreadable WAV file {path}: {exc}") from exc

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise ValueError(
            f"Unsupported WAV sample format {data.dtype} in {path}; "
            "expected 16-bit PCM or 32-bit float."
        )
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if samples.size == 0:
        raise ValueError(f"WAV file has an empty data chunk: {path}")
    return AudioBuffer(samples, int(rate))


def encode_pcm16(samples: np.ndarray) -> np.ndarray:
    scaled = np.round(np.clip(samples, -1.0, 1.0) * PCM_SCALE)
    return np.clip(scaled, -32768, 32767).astype(np.int16)


def write_wav(path: Path, buf: AudioBuffer, *, subtype: str = "pcm16") -> None:
    _require_samples(buf)
    path = Path(path)
    if subtype == "pcm16":
        data = encode_pcm16(buf.samples)
    elif subtype == "float32":
        data = np.clip(buf.samples, -1.0, 1.0).astype(np.float32)
    else:
        raise ValueError(f"Unknown WAV subtype: {subtype}")
    path.parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(path, buf.sample_rate, data)


def resample(buf: AudioBuffer, target_rate: int) -> AudioBuffer:
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise ValueError(f"Target rate must be positive, got {target_rate}.")
    if target_rate == buf.sample_rate:
        return buf
    source_rate = buf.sample_rate
    divisor = np.gcd(source_rate, target_rate)
    up = target_rate // divisor
    down = source_rate // divisor
    # Kaiser beta 8.6 puts the first sidelobe near -90 dB.
    output = sps.resample_poly(buf.samples, up, down, window=("kaiser", 8.6))
    expected = int(round(buf.samples.size * target_rate / source_rate))
    if output.size > expected:
        output = output[:expected]
    elif output.size < expected:
        output = np.pad(output, (0, expected - output.size))
    return AudioBuffer(output, target_rate)


def chirp(duration_s: float, f_start: float, f_end: float, sample_rate: int) -> AudioBuffer:
    """Exponential sine sweep from ``f_start`` to ``f_end``.

    The sweep spans the interval between the first and the last sample, so the
    instantaneous frequency is ``f_start`` at sample 0 and ``f_end`` at the
    final sample.
    """

    if duration_s <= 0:
        raise ValueError("Chirp duration must be positive.")
    if not 0 < f_start < f_end < sample_rate / 2:
        raise ValueError(
            "Chirp requires 0 < f_start < f_end < sample_rate/2, "
            f"got {f_start}, {f_end} at {sample_rate} Hz."
        )
    n = int(round(duration_s * sample_rate))
    if n < 2:
        raise ValueError("Chirp needs at least two samples.")
    span = (n - 1) / sample_rate
    ratio = f_end / f_start
    position = np.arange(n) / (n - 1)
    phase = 2 * np.pi * f_start * span / np.log(ratio) * (ratio**position - 1.0)
    return AudioBuffer(np.sin(phase), sample_rate)


def fft(buf: AudioBuffer) -> Spectrum:
    _require_samples(buf)
    n = buf.samples.size
    return Spectrum(
        bins=np.fft.fft(buf.samples),
        bin_resolution=buf.sample_rate / n,
        origin_length=n,
        sample_rate=buf.sample_rate,
    )


def ifft(spec: Spectrum) -> AudioBuffer:
    if spec.origin_length == 0:
        raise ValueError("Spectrum is empty.")
    values = np.fft.ifft(spec.bins)
    return AudioBuffer(values.real, spec.sample_rate)


def frame_signal(samples: np.ndarray, frame_length: int, hop: int) -> np.ndarray:
    """Split into overlapping frames; a tail shorter than a frame is zero padded."""

    if frame_length <= 0 or hop <= 0:
        raise ValueError("Frame length and hop must be positive.")
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size <= frame_length:
        padded = np.pad(samples, (0, frame_length - samples.size))
        return padded.reshape(1, frame_length)
    count = 1 + int(np.ceil((samples.size - frame_length) / hop))
    total = (count - 1) * hop + frame_length
    padded = np.pad(samples, (0, total - samples.size))
    windows = np.lib.stride_tricks.sliding_window_view(padded, frame_length)
    return windows[::hop][:count].copy()


def rms_envelope(
    buf: AudioBuffer,
    frame_s: float = ENVELOPE_FRAME_S,
    hop_s: float = ENVELOPE_HOP_S,
) -> np.ndarray:
    frame_length = max(1, int(round(frame_s * buf.sample_rate)))
    hop = max(1, int(round(hop_s * buf.sample_rate)))
    frames = frame_signal(buf.samples, frame_length, hop)
    return np.sqrt(np.mean(frames**2, axis=1))


def cross_correlation(a: AudioBuffer, b: AudioBuffer) -> tuple[np.ndarray, np.ndarray]:
    """Normalized cross-correlation; a positive lag means ``b`` trails ``a``."""

    _require_samples(a, "a")
    _require_samples(b, "b")
    _require_same_rate(a, b)
    lags = sps.correlation_lags(b.samples.size, a.samples.size, mode="full")
    norm = np.linalg.norm(a.samples) * np.linalg.norm(b.samples)
    if norm == 0:
        return lags, np.zeros(lags.size)
    coeffs = sps.correlate(b.samples, a.samples, mode="full", method="auto") / norm
    return lags, np.clip(coeffs, -1.0, 1.0)


def dtw_distance(a: AudioBuffer, b: AudioBuffer) -> float:
    """Path-length-normalized DTW between the RMS envelopes of two buffers."""

    _require_samples(a, "a")
    _require_samples(b, "b")
    _require_same_rate(a, b)
    x = rms_envelope(a)
    y = rms_envelope(b)
    if x.size > y.size:
        # Canonical orientation keeps tie-breaks, and so the result, symmetric.
        x, y = y, x
    elif x.size == y.size and tuple(x) > tuple(y):
        x, y = y, x
    local = np.abs(x[:, None] - y[None, :])
    rows, cols = local.shape
    cost = np.full((rows + 1, cols + 1), np.inf)
    steps = np.zeros((rows + 1, cols + 1), dtype=np.int64)
    cost[0, 0] = 0.0
    for i in range(1, rows + 1):
        for j in range(1, cols + 1):
            candidates = (
                (cost[i - 1, j - 1], steps[i - 1, j - 1]),
                (cost[i - 1, j], steps[i - 1, j]),
                (cost[i, j - 1], steps[i, j - 1]),
            )
            best_cost, best_steps = min(candidates)
            cost[i, j] = best_cost + local[i - 1, j - 1]
            steps[i, j] = best_steps + 1
    return float(cost[rows, cols] / steps[rows, cols])
