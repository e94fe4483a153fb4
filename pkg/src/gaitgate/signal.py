"""Acceleration signal pipeline: magnitude, windowing, spectrograms, dropout.

Conventions fixed here and relied on everywhere else:

- Acceleration is in units of g; sample timestamps are seconds.
- The model input is the dB power spectrogram of the 3D magnitude signal,
  computed frame-by-frame with a symmetric Hann window.
- dB means ``10 * log10(power)`` with the power floored at ``db_floor_eps``.
- Pixel dropout writes literal 0.0 into the dB array.

All functions are pure; augmentation randomness enters only through an
explicit seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class AccelSample(NamedTuple):
    """One timestamped 3-axis accelerometer reading (units: seconds, g)."""

    t: float
    ax: float
    ay: float
    az: float


class AccelSeries:
    """A 3-axis accelerometer stream at a nominal fixed sample rate.

    Validates on construction: at least one sample, strictly increasing
    timestamps, all values finite, and median inter-sample gap within 1% of
    the nominal 1/fs.
    """

    def __init__(self, t: np.ndarray, xyz: np.ndarray, fs: float):
        t = np.asarray(t, dtype=np.float64)
        xyz = np.asarray(xyz, dtype=np.float64)
        if t.ndim != 1 or t.size == 0:
            raise ValueError("empty input: need at least one sample")
        if xyz.shape != (t.size, 3):
            raise ValueError(f"xyz shape {xyz.shape} does not match {t.size} timestamps")
        if not (np.isfinite(t).all() and np.isfinite(xyz).all()):
            raise ValueError("non-finite values in accelerometer series")
        if t.size > 1:
            gaps = np.diff(t)
            if (gaps <= 0).any():
                raise ValueError("timestamps must be strictly increasing")
            nominal = 1.0 / fs
            if abs(np.median(gaps) - nominal) >= 0.01 * nominal:
                raise ValueError(
                    f"median sample gap {np.median(gaps):.6f}s deviates >1% "
                    f"from nominal {nominal:.6f}s (fs={fs})"
                )
        if fs <= 0:
            raise ValueError("sample rate must be positive")
        self.t = t
        self.xyz = xyz
        self.fs = float(fs)

    def __len__(self) -> int:
        return self.t.size

    @property
    def duration(self) -> float:
        """Length of the stream in seconds (sample count over rate)."""
        return len(self) / self.fs

    def sample(self, i: int) -> AccelSample:
        return AccelSample(float(self.t[i]), *map(float, self.xyz[i]))


@dataclass(frozen=True)
class MagnitudeSeries:
    """Scalar acceleration magnitudes at a fixed sample rate."""

    values: np.ndarray
    fs: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if (values < 0).any():
            raise ValueError("magnitudes must be nonnegative")

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class StftConfig:
    """Frame/FFT geometry for the spectrogram front end.

    Defaults (128/64/128 at 100 Hz) put the gait fundamental (1.5-2.3 Hz) and
    its first few harmonics in distinct bins and give a 65x14 spectrogram for
    a 10 s window.
    """

    frame_len: int = 128
    hop: int = 64
    fft_len: int = 128
    db_floor_eps: float = 1e-12

    def __post_init__(self):
        if not (0 < self.hop <= self.frame_len <= self.fft_len):
            raise ValueError(
                f"need 0 < hop <= frame_len <= fft_len, got "
                f"hop={self.hop} frame_len={self.frame_len} fft_len={self.fft_len}"
            )
        if self.db_floor_eps <= 0:
            raise ValueError("db_floor_eps must be positive")

    @property
    def freq_bins(self) -> int:
        return self.fft_len // 2 + 1

    def frames_for(self, n_samples: int) -> int:
        """Number of full STFT frames a signal of n_samples yields."""
        if n_samples < self.frame_len:
            return 0
        return (n_samples - self.frame_len) // self.hop + 1


@dataclass(frozen=True)
class AugmentConfig:
    """Random pixel dropout: each spectrogram cell is zeroed independently."""

    dropout_p: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.dropout_p <= 1.0:
            raise ValueError(f"dropout_p must be in [0, 1], got {self.dropout_p}")


@dataclass(frozen=True)
class Spectrogram:
    """F x T array of dB values (freq bins ascending, frames in time order)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", data)
        if data.ndim != 2:
            raise ValueError(f"spectrogram must be 2D, got shape {data.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


def magnitude(series: AccelSeries) -> MagnitudeSeries:
    """Per-sample Euclidean norm of the 3-axis acceleration.

    Collapsing to the magnitude discards orientation, which makes the signal
    invariant to how the sensor sits on the head.
    """
    if len(series) == 0:
        raise ValueError("empty input")
    values = np.sqrt((series.xyz**2).sum(axis=1))
    return MagnitudeSeries(values=values, fs=series.fs)


def window_bounds(
    n_samples: int, fs: float, window_sec: float, overlap_frac: float
) -> list[tuple[int, int]]:
    """(start, end) sample index pairs for fixed-duration windows.

    Windows advance by ``(1 - overlap_frac) * window_sec``; a trailing partial
    window is discarded, never padded.
    """
    if not 0.0 <= overlap_frac < 1.0:
        raise ValueError(f"overlap_frac must be in [0, 1), got {overlap_frac}")
    win = int(round(window_sec * fs))
    stride = int(round(window_sec * (1.0 - overlap_frac) * fs))
    if win <= 0 or stride <= 0:
        raise ValueError(f"degenerate window: {win} samples, stride {stride}")
    if n_samples < win:
        return []
    count = (n_samples - win) // stride + 1
    return [(i * stride, i * stride + win) for i in range(count)]


def slice_windows(
    series: MagnitudeSeries, window_sec: float, overlap_frac: float
) -> list[MagnitudeSeries]:
    """Cut a magnitude series into overlapping fixed-duration windows.

    A series shorter than one window yields an empty list.
    """
    bounds = window_bounds(len(series), series.fs, window_sec, overlap_frac)
    return [MagnitudeSeries(series.values[a:b], series.fs) for a, b in bounds]


def hann_window(n: int) -> np.ndarray:
    """Symmetric Hann window w[k] = 0.5 * (1 - cos(2 pi k / (n - 1)))."""
    if n == 1:
        return np.ones(1)
    k = np.arange(n)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * k / (n - 1)))


def stft_power(window: MagnitudeSeries, cfg: StftConfig) -> np.ndarray:
    """Power spectrogram of one signal window.

    Each frame is ``signal[f*hop : f*hop + frame_len]`` times the symmetric
    Hann window, zero-padded to ``fft_len``; bin k holds ``|DFT[k]|**2`` for
    k = 0 .. fft_len/2. Returns an (freq_bins, frames) float array.
    """
    n = len(window)
    if n < cfg.frame_len:
        raise ValueError(
            f"window of {n} samples is shorter than one STFT frame ({cfg.frame_len})"
        )
    frames = cfg.frames_for(n)
    taper = hann_window(cfg.frame_len)
    stack = np.empty((frames, cfg.frame_len))
    for f in range(frames):
        start = f * cfg.hop
        stack[f] = window.values[start : start + cfg.frame_len]
    spectrum = np.fft.rfft(stack * taper, n=cfg.fft_len, axis=1)
    power = (spectrum.real**2 + spectrum.imag**2).T
    return power


def power_to_db(power: np.ndarray, eps: float) -> Spectrogram:
    """Convert a power array to dB: ``10 * log10(max(power, eps))``."""
    power = np.asarray(power, dtype=np.float64)
    if (power < 0).any():
        raise ValueError("power values must be nonnegative")
    return Spectrogram(10.0 * np.log10(np.maximum(power, eps)))


def pixel_dropout(spec: Spectrogram, cfg: AugmentConfig) -> Spectrogram:
    """Zero each spectrogram cell independently with probability dropout_p.

    Deterministic for a fixed seed; the zeros are literal 0.0 dB, not the
    floor value, so dropped pixels stand out from silence.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    mask = rng.random(spec.data.shape) < cfg.dropout_p
    out = spec.data.copy()
    out[mask] = 0.0
    return Spectrogram(out)


def spectrogram_windows(
    series: MagnitudeSeries,
    window_sec: float,
    overlap_frac: float,
    cfg: StftConfig,
) -> tuple[list[Spectrogram], np.ndarray]:
    """Window a magnitude series and spectrogram every window.

    Returns the spectrograms plus an (n, 2) array of window (start, end)
    times in seconds, for overlap bookkeeping downstream.
    """
    bounds = window_bounds(len(series), series.fs, window_sec, overlap_frac)
    specs = []
    for a, b in bounds:
        power = stft_power(MagnitudeSeries(series.values[a:b], series.fs), cfg)
        specs.append(power_to_db(power, cfg.db_floor_eps))
    intervals = np.array([(a / series.fs, b / series.fs) for a, b in bounds]).reshape(-1, 2)
    return specs, intervals
