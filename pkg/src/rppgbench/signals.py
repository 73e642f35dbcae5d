"""Uniform-rate time-series primitives shared by every rPPG method.

All containers are immutable: their sample arrays are copied on construction
and marked read-only, so values can be shared between threads and processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

# Butterworth prototype order per pass; the bandpass transform doubles it and
# the forward-backward application doubles the magnitude response again.
FILTER_ORDER = 2
MIN_FILTER_SAMPLES = 6 * 2 * FILTER_ORDER

DEFAULT_DETREND_S = 1.6


def _frozen(values, ndim: int) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-D array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SampledSeries:
    """A 1-D signal sampled at a constant rate starting at ``t0_s``."""

    sample_rate_hz: float
    values: np.ndarray
    t0_s: float = 0.0

    def __post_init__(self):
        if not (self.sample_rate_hz > 0 and math.isfinite(self.sample_rate_hz)):
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "values", _frozen(self.values, 1))
        if self.values.size < 1:
            raise ValueError("a series needs at least one sample")
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))
        object.__setattr__(self, "t0_s", float(self.t0_s))

    def __len__(self) -> int:
        return self.values.size

    @property
    def duration_s(self) -> float:
        return (len(self) - 1) / self.sample_rate_hz

    @property
    def t_end_s(self) -> float:
        return self.t0_s + self.duration_s

    def times(self) -> np.ndarray:
        return self.t0_s + np.arange(len(self)) / self.sample_rate_hz

    def replace(self, values, t0_s: float | None = None) -> SampledSeries:
        """Same rate, new samples (and optionally a new start time)."""
        return SampledSeries(self.sample_rate_hz, values, self.t0_s if t0_s is None else t0_s)


@dataclass(frozen=True, eq=False)
class RgbTrace:
    """Per-frame spatial-mean R, G, B intensities (0-255) at the video frame rate.

    ``values`` has shape (N, 3) with columns R, G, B.
    """

    sample_rate_hz: float
    values: np.ndarray
    t0_s: float = 0.0

    def __post_init__(self):
        if not (self.sample_rate_hz > 0 and math.isfinite(self.sample_rate_hz)):
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        arr = _frozen(self.values, 2)
        if arr.shape[1] != 3:
            raise ValueError(f"an RGB trace needs 3 columns, got shape {arr.shape}")
        if arr.shape[0] < 2:
            raise ValueError("an RGB trace needs at least 2 frames")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 255.0:
            raise ValueError("RGB trace values must lie in [0, 255]")
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))
        object.__setattr__(self, "t0_s", float(self.t0_s))

    @classmethod
    def from_channels(cls, r, g, b, sample_rate_hz: float, t0_s: float = 0.0) -> RgbTrace:
        return cls(sample_rate_hz, np.column_stack([r, g, b]), t0_s)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def r(self) -> np.ndarray:
        return self.values[:, 0]

    @property
    def g(self) -> np.ndarray:
        return self.values[:, 1]

    @property
    def b(self) -> np.ndarray:
        return self.values[:, 2]

    @property
    def duration_s(self) -> float:
        return (len(self) - 1) / self.sample_rate_hz

    @property
    def t_end_s(self) -> float:
        return self.t0_s + self.duration_s

    def channel(self, idx: int) -> SampledSeries:
        return SampledSeries(self.sample_rate_hz, self.values[:, idx], self.t0_s)

    def scaled(self, k: float) -> RgbTrace:
        return RgbTrace(self.sample_rate_hz, self.values * k, self.t0_s)

    def slice(self, start: int, stop: int) -> RgbTrace:
        return RgbTrace(
            self.sample_rate_hz, self.values[start:stop], self.t0_s + start / self.sample_rate_hz
        )


@dataclass(frozen=True)
class BandLimits:
    low_hz: float
    high_hz: float

    def __post_init__(self):
        if not (0 < self.low_hz < self.high_hz and math.isfinite(self.high_hz)):
            raise ValueError(f"need 0 < low_hz < high_hz, got [{self.low_hz}, {self.high_hz}]")

    @classmethod
    def parse(cls, text: str) -> BandLimits:
        """Parse ``"lo:hi"`` in Hz."""
        try:
            lo, hi = (float(p) for p in text.split(":"))
        except ValueError:
            raise ValueError(f"band must look like 'lo:hi', got {text!r}") from None
        return cls(lo, hi)

    def check_nyquist(self, sample_rate_hz: float) -> None:
        if self.high_hz >= sample_rate_hz / 2:
            raise ValueError(
                f"band edge {self.high_hz} Hz is not below Nyquist ({sample_rate_hz / 2} Hz)"
            )


DEFAULT_BAND = BandLimits(0.6, 3.0)


def resample(series: SampledSeries, target_rate_hz: float) -> SampledSeries:
    """Linearly interpolate ``series`` onto a grid at ``target_rate_hz``.

    The output starts at the same ``t0_s`` and covers as much of the original
    span as the new grid allows without extrapolating.
    """
    if not target_rate_hz > 0:
        raise ValueError(f"target rate must be positive, got {target_rate_hz}")
    if len(series) < 2:
        raise ValueError("resampling needs at least 2 samples")
    if target_rate_hz == series.sample_rate_hz:
        return series
    n_out = int(math.floor(series.duration_s * target_rate_hz + 1e-9)) + 1
    src = np.arange(len(series)) / series.sample_rate_hz
    dst = np.arange(n_out) / target_rate_hz
    return SampledSeries(target_rate_hz, np.interp(dst, src, series.values), series.t0_s)


def _centered_moving_mean(x: np.ndarray, width: int) -> np.ndarray:
    n = x.size
    left = width // 2
    right = width - 1 - left
    idx = np.arange(n)
    lo = np.maximum(idx - left, 0)
    hi = np.minimum(idx + right, n - 1) + 1
    csum = np.concatenate([[0.0], np.cumsum(x)])
    return (csum[hi] - csum[lo]) / (hi - lo)


def detrend(series: SampledSeries, window_s: float = DEFAULT_DETREND_S) -> SampledSeries:
    """Subtract a centered moving average of ``round(window_s * rate)`` samples.

    Near the edges the averaging window shrinks to the samples available.
    """
    width = int(round(window_s * series.sample_rate_hz))
    if width < 2:
        raise ValueError(
            f"detrend window of {window_s} s is shorter than 2 samples at {series.sample_rate_hz} Hz"
        )
    x = series.values
    # cumulative sums of a constant are not exact; remove the offset first
    centered = x - x.mean()
    return series.replace(centered - _centered_moving_mean(centered, width))


def design_bandpass(band: BandLimits, sample_rate_hz: float) -> np.ndarray:
    band.check_nyquist(sample_rate_hz)
    return sps.butter(
        FILTER_ORDER, [band.low_hz, band.high_hz], btype="bandpass", output="sos", fs=sample_rate_hz
    )


def bandpass(series: SampledSeries, band: BandLimits = DEFAULT_BAND) -> SampledSeries:
    """Zero-phase Butterworth bandpass (forward-backward second-order sections)."""
    sos = design_bandpass(band, series.sample_rate_hz)
    if len(series) < MIN_FILTER_SAMPLES:
        raise ValueError(
            f"series of {len(series)} samples is too short to filter (need {MIN_FILTER_SAMPLES})"
        )
    padlen = min(len(series) - 1, 3 * (2 * len(sos) + 1))
    return series.replace(sps.sosfiltfilt(sos, series.values, padlen=padlen))


def settling_samples(band: BandLimits, sample_rate_hz: float, n: int) -> int:
    """Edge length to discard after zero-phase filtering: 3/low_hz s, capped at 10% of n."""
    return min(int(round(3.0 / band.low_hz * sample_rate_hz)), int(0.1 * n))


def trim_edges(series: SampledSeries, band: BandLimits) -> SampledSeries:
    k = settling_samples(band, series.sample_rate_hz, len(series))
    if k == 0:
        return series
    return series.replace(series.values[k:-k], series.t0_s + k / series.sample_rate_hz)


def frame_difference_normalize(trace) -> np.ndarray:
    """Normalized difference of adjacent frames, ``(c[t+1] - c[t]) / (c[t] + c[t+1])``.

    Accepts an :class:`RgbTrace` or any array whose first axis is time (for
    example raw frames of shape (T, H, W, 3)). Returns an array with one
    fewer entry along the time axis.
    """
    c = trace.values if isinstance(trace, RgbTrace) else np.asarray(trace, dtype=np.float64)
    if c.shape[0] < 2:
        raise ValueError("need at least 2 frames")
    num = c[1:] - c[:-1]
    den = c[:-1] + c[1:]
    bad = den == 0
    if np.any(bad):
        t = int(np.argwhere(bad)[0][0])
        raise ZeroDivisionError(f"frames {t} and {t + 1} sum to zero (all-black pair)")
    return num / den


def window_split(series: SampledSeries, window_s: float, stride_s: float) -> list[SampledSeries]:
    """Cut ``series`` into windows of ``window_s`` every ``stride_s``; a partial tail is dropped."""
    if not stride_s > 0:
        raise ValueError("stride must be positive")
    rate = series.sample_rate_hz
    w = int(round(window_s * rate))
    s = max(int(round(stride_s * rate)), 1)
    n = len(series)
    if w < 1 or w > n:
        raise ValueError(f"window of {w} samples does not fit a series of {n}")
    count = (n - w) // s + 1
    return [
        SampledSeries(rate, series.values[i * s : i * s + w], series.t0_s + i * s / rate)
        for i in range(count)
    ]
