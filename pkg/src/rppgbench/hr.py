"""Welch PSD and spectral-peak heart-rate estimation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signals import (
    DEFAULT_BAND,
    BandLimits,
    SampledSeries,
    bandpass,
    detrend,
    resample,
    trim_edges,
    window_split,
)

DEFAULT_SEG_S = 20.0
DEFAULT_OVERLAP = 0.5
# 0.5 BPM expressed in Hz
MAX_BIN_HZ = 0.5 / 60.0
MIN_PEAK_RATIO = 3.0
GT_RATE_HZ = 25.0


class NoPeakError(ValueError):
    """The band holds no spectral peak that stands out from its surroundings."""


@dataclass(frozen=True, eq=False)
class PsdEstimate:
    freqs_hz: np.ndarray
    density: np.ndarray
    bin_hz: float
    seg_len: int
    n_segments: int
    sample_rate_hz: float

    @property
    def resolution_hz(self) -> float:
        """Raw (unpadded) frequency resolution of one segment."""
        return self.sample_rate_hz / self.seg_len

    def in_band(self, band: BandLimits) -> np.ndarray:
        return (self.freqs_hz >= band.low_hz) & (self.freqs_hz <= band.high_hz)


@dataclass(frozen=True, eq=False)
class HrEstimate:
    bpm: float
    peak_density: float
    band: BandLimits
    snr_db: float
    psd: PsdEstimate

    @property
    def peak_hz(self) -> float:
        return self.bpm / 60.0


def padded_nfft(seg_len: int, sample_rate_hz: float, max_bin_hz: float = MAX_BIN_HZ) -> int:
    """Smallest power of two >= seg_len giving a bin spacing of at most ``max_bin_hz``."""
    need = max(seg_len, int(np.ceil(sample_rate_hz / max_bin_hz)))
    return 1 << (need - 1).bit_length()


def hann(n: int) -> np.ndarray:
    """Periodic Hann window of length ``n``."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def welch_psd(
    series: SampledSeries,
    seg_len_s: float = DEFAULT_SEG_S,
    overlap_frac: float = DEFAULT_OVERLAP,
    nfft: int | None = None,
) -> PsdEstimate:
    """One-sided Welch PSD with a Hann window.

    Each segment has its mean removed, is multiplied by a periodic Hann
    window and is zero-padded to ``nfft`` points. When ``nfft`` is None the
    padding follows :func:`padded_nfft`; ``nfft=0`` disables padding.
    Densities are in units^2/Hz, so the spectrum integrates to the signal
    variance.
    """
    if not 0.0 <= overlap_frac < 1.0:
        raise ValueError(f"overlap_frac must be in [0, 1), got {overlap_frac}")
    fs = series.sample_rate_hz
    x = series.values
    seg = min(int(round(seg_len_s * fs)), x.size)
    if seg < 8:
        raise ValueError(f"a Welch segment needs at least 8 samples, got {seg}")
    if nfft is None:
        nfft = padded_nfft(seg, fs)
    elif nfft == 0:
        nfft = seg
    elif nfft < seg:
        raise ValueError(f"nfft={nfft} is shorter than the segment ({seg})")

    hop = max(seg - int(np.floor(overlap_frac * seg)), 1)
    n_seg = (x.size - seg) // hop + 1
    starts = np.arange(n_seg) * hop
    frames = x[starts[:, None] + np.arange(seg)]
    frames = frames - frames.mean(axis=1, keepdims=True)
    win = hann(seg)
    spec = np.fft.rfft(frames * win, n=nfft, axis=1)
    density = (np.abs(spec) ** 2).mean(axis=0) / (fs * np.sum(win**2))
    # one-sided: double everything except DC and (for even nfft) Nyquist
    if nfft % 2 == 0:
        density[1:-1] *= 2.0
    else:
        density[1:] *= 2.0
    freqs = np.fft.rfftfreq(nfft, d=1.0 / fs)
    return PsdEstimate(freqs, density, fs / nfft, seg, n_seg, fs)


def hr_from_psd(
    psd: PsdEstimate, band: BandLimits = DEFAULT_BAND, min_peak_ratio: float = MIN_PEAK_RATIO
) -> HrEstimate:
    mask = psd.in_band(band)
    if not np.any(mask):
        raise NoPeakError(f"no frequency bins inside [{band.low_hz}, {band.high_hz}] Hz")
    idx = np.flatnonzero(mask)
    dens = psd.density[idx]
    # np.argmax returns the first maximum, i.e. the lowest frequency on ties
    k = int(np.argmax(dens))
    peak = float(dens[k])
    median = float(np.median(dens))
    if not (np.isfinite(peak) and peak > 0.0) or peak <= min_peak_ratio * median:
        raise NoPeakError(
            f"in-band maximum {peak:.3g} does not exceed {min_peak_ratio:g}x the band median"
        )
    f_peak = float(psd.freqs_hz[idx[k]])

    # peak power: the Hann main lobe around the peak (two raw bins either side)
    lobe = 2.0 * psd.resolution_hz
    near = np.abs(psd.freqs_hz[idx] - f_peak) <= lobe
    signal_power = dens[near].sum()
    rest = dens[~near].sum()
    snr_db = float(10 * np.log10(signal_power / rest)) if rest > 0 else float("inf")
    return HrEstimate(60.0 * f_peak, peak, band, snr_db, psd)


def estimate_hr(
    pulse: SampledSeries,
    band: BandLimits = DEFAULT_BAND,
    seg_len_s: float = DEFAULT_SEG_S,
    overlap_frac: float = DEFAULT_OVERLAP,
    min_peak_ratio: float = MIN_PEAK_RATIO,
) -> HrEstimate:
    """Heart rate at the maximum in-band Welch density.

    Raises :class:`NoPeakError` when the band maximum is not above
    ``min_peak_ratio`` times the in-band median (or is zero).
    """
    band.check_nyquist(pulse.sample_rate_hz)
    return hr_from_psd(welch_psd(pulse, seg_len_s, overlap_frac), band, min_peak_ratio)


def pulse_to_hr(
    pulse: SampledSeries,
    band: BandLimits = DEFAULT_BAND,
    seg_len_s: float = DEFAULT_SEG_S,
    overlap_frac: float = DEFAULT_OVERLAP,
) -> HrEstimate:
    """Bandpass, drop the filter settling edges, then :func:`estimate_hr`."""
    filtered = trim_edges(bandpass(pulse, band), band)
    return estimate_hr(filtered, band, seg_len_s, overlap_frac)


def gt_hr_from_ppg(
    ppg: SampledSeries,
    band: BandLimits = DEFAULT_BAND,
    seg_len_s: float = DEFAULT_SEG_S,
    overlap_frac: float = DEFAULT_OVERLAP,
) -> HrEstimate:
    """Reference heart rate from a contact PPG recording.

    The PPG is brought to the video-like rate of 25 Hz and detrended, then
    goes through the same bandpass and Welch path as the rPPG estimates.
    """
    if ppg.sample_rate_hz < 10.0:
        raise ValueError(f"PPG rate {ppg.sample_rate_hz} Hz is below 10 Hz")
    if np.ptp(ppg.values) == 0.0:
        raise NoPeakError("constant PPG has no pulsatile content")
    at_rate = resample(ppg, GT_RATE_HZ)
    return pulse_to_hr(detrend(at_rate), band, seg_len_s, overlap_frac)


@dataclass(frozen=True)
class WindowedHr:
    center_s: float
    bpm: float


def windowed_hr(
    pulse: SampledSeries,
    window_s: float = 10.0,
    hop_s: float = 1.0,
    band: BandLimits = DEFAULT_BAND,
) -> list[WindowedHr]:
    """Heart-rate trajectory from short windows of one bandpassed pulse signal.

    The whole signal is filtered once and its settling edges dropped; each
    window is then a single Welch segment.
    """
    filtered = trim_edges(bandpass(pulse, band), band)
    out = []
    for win in window_split(filtered, window_s, hop_s):
        est = estimate_hr(win, band, seg_len_s=window_s)
        out.append(WindowedHr(win.t0_s + 0.5 * win.duration_s, est.bpm))
    return out
