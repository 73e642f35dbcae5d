"""Classical rPPG estimators: GREEN, CHROM, POS and ICA.

Every estimator maps an :class:`~rppgbench.signals.RgbTrace` to a
:class:`PulseSignal` at the trace's frame rate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .hr import DEFAULT_OVERLAP, DEFAULT_SEG_S, welch_psd
from .signals import (
    DEFAULT_BAND,
    DEFAULT_DETREND_S,
    BandLimits,
    RgbTrace,
    SampledSeries,
    bandpass,
    detrend,
)


METHODS = ("GREEN", "CHROM", "POS", "ICA")

# Variation below this (relative to the signal level, or in the unit-mean
# normalized channels) is floating-point residue and is treated as zero.
NUMERIC_FLOOR = 1e-12

# rows project temporally normalized RGB onto the plane orthogonal to skin tone
POS_PROJECTION = np.array([[0.0, 1.0, -1.0], [-2.0, 1.0, 1.0]])


class IcaConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True, eq=False)
class PulseSignal(SampledSeries):
    method_id: str = ""


@dataclass(frozen=True)
class MethodConfig:
    pos_window_s: float = 1.6
    ica_seed: int = 0
    ica_max_iter: int = 200
    ica_tol: float = 1e-6

    def __post_init__(self):
        if not (self.pos_window_s > 0 and self.ica_max_iter > 0 and self.ica_tol > 0):
            raise ValueError(f"method parameters must be positive: {self}")
        if self.ica_seed < 0:
            raise ValueError("ica_seed must be a non-negative integer")


def _pulse(trace: RgbTrace, values: np.ndarray, method_id: str) -> PulseSignal:
    return PulseSignal(trace.sample_rate_hz, values, trace.t0_s, method_id=method_id)


def green(trace: RgbTrace, detrend_s: float = DEFAULT_DETREND_S) -> PulseSignal:
    """Detrended, zero-mean green channel."""
    g = trace.channel(1)
    out = detrend(g, detrend_s).values
    out = out - out.mean()
    if out.std() <= NUMERIC_FLOOR * abs(g.values.mean()):
        out = np.zeros_like(out)
    return _pulse(trace, out, "GREEN")


def chrom(trace: RgbTrace, band: BandLimits = DEFAULT_BAND) -> PulseSignal:
    """Chrominance method on the whole trace.

    Channels are divided by their temporal means, combined into the two
    chrominance signals X = 3R - 2G and Y = 1.5R + G - 1.5B, bandpassed, and
    mixed as X - (std X / std Y) * Y.
    """
    rgb = trace.values
    mu = rgb.mean(axis=0)
    if np.any(mu == 0.0):
        raise ValueError("CHROM needs every channel to have a nonzero mean")
    rn, gn, bn = (rgb / mu).T
    rate = trace.sample_rate_hz
    x = bandpass(SampledSeries(rate, 3.0 * rn - 2.0 * gn), band).values
    y = bandpass(SampledSeries(rate, 1.5 * rn + gn - 1.5 * bn), band).values
    sd_y = y.std()
    s = x if sd_y <= NUMERIC_FLOOR else x - (x.std() / sd_y) * y
    s = s - s.mean()
    if s.std() <= NUMERIC_FLOOR:
        s = np.zeros_like(s)
    return _pulse(trace, s, "CHROM")


def pos(trace: RgbTrace, window_s: float = 1.6) -> PulseSignal:
    """Plane-orthogonal-to-skin method with a sliding window and overlap-add.

    Hop is one frame. Each window is normalized by its own channel means,
    projected with :data:`POS_PROJECTION`, tuned as S1 + (std S1 / std S2) S2,
    mean-subtracted and accumulated into the output.
    """
    n = len(trace)
    w = int(round(window_s * trace.sample_rate_hz))
    if w < 2:
        raise ValueError(f"POS window of {window_s} s is shorter than 2 frames")
    if w > n:
        raise ValueError(f"POS window ({w} frames) is longer than the trace ({n} frames)")
    # windows: (n_win, 3, w)
    win = sliding_window_view(trace.values.T, w, axis=1).transpose(1, 0, 2)
    mu = win.mean(axis=2, keepdims=True)
    if np.any(mu == 0.0):
        raise ValueError("POS needs nonzero channel means in every window")
    s = np.einsum("pc,kct->kpt", POS_PROJECTION, win / mu)
    s1, s2 = s[:, 0, :], s[:, 1, :]
    sd1 = s1.std(axis=1)
    sd2 = s2.std(axis=1)
    alpha = np.divide(sd1, sd2, out=np.zeros_like(sd1), where=sd2 > NUMERIC_FLOOR)
    h = s1 + alpha[:, None] * s2
    h -= h.mean(axis=1, keepdims=True)
    h[h.std(axis=1) <= NUMERIC_FLOOR] = 0.0

    out = np.zeros(n)
    n_win = h.shape[0]
    for j in range(w):
        out[j : j + n_win] += h[:, j]
    return _pulse(trace, out, "POS")


# --- ICA -------------------------------------------------------------------


def _whiten(x: np.ndarray, rel_tol: float = 1e-10) -> np.ndarray:
    """PCA-whiten rows of ``x`` (channels x samples), dropping null directions."""
    cov = x @ x.T / x.shape[1]
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    keep = evals > rel_tol * evals[0]
    return (evecs[:, keep] / np.sqrt(evals[keep])).T @ x


def fastica_deflation(
    z: np.ndarray, seed: int, max_iter: int = 200, tol: float = 1e-6
) -> tuple[np.ndarray, bool]:
    """One-unit FastICA with tanh contrast and Gram-Schmidt deflation.

    ``z`` must be white (rows uncorrelated with unit variance). Returns the
    unmixing matrix (rows are unit vectors) and whether every unit converged.
    """
    m, t = z.shape
    rng = np.random.default_rng(seed)
    w_init = rng.uniform(-1.0, 1.0, size=(m, m))
    W = np.zeros((m, m))
    converged = True
    for c in range(m):
        w = w_init[c]
        w = w - W[:c].T @ (W[:c] @ w)
        w /= np.linalg.norm(w)
        for _ in range(max_iter):
            u = w @ z
            g = np.tanh(u)
            w_new = (z @ g) / t - (1.0 - g**2).mean() * w
            w_new -= W[:c].T @ (W[:c] @ w_new)
            w_new /= np.linalg.norm(w_new)
            done = abs(abs(w_new @ w) - 1.0) < tol
            w = w_new
            if done:
                break
        else:
            converged = False
        W[c] = w
    return W, converged


def spectral_peak_ratio(
    x: np.ndarray, sample_rate_hz: float, band: BandLimits = DEFAULT_BAND
) -> float:
    """Largest in-band Welch density over total spectral power."""
    psd = welch_psd(SampledSeries(sample_rate_hz, x), DEFAULT_SEG_S, DEFAULT_OVERLAP)
    total = psd.density.sum()
    if total <= 0.0:
        return 0.0
    return float(psd.density[psd.in_band(band)].max() / total)


def ica(
    trace: RgbTrace, config: MethodConfig = MethodConfig(), band: BandLimits = DEFAULT_BAND
) -> PulseSignal:
    """Blind source separation of the three channels, keeping the most pulse-like source.

    The selected source is the one with the highest in-band spectral peak
    relative to its total power. Its sign is chosen to correlate positively
    with the green channel. If FastICA fails to converge a warning is issued
    and the selection runs on the whitened principal components instead.
    """
    x = trace.values.T
    if x.shape[1] < 30:
        raise ValueError("ICA needs at least 30 samples per channel")
    sd = x.std(axis=1)
    if np.any(sd <= NUMERIC_FLOOR * np.abs(x.mean(axis=1))) or np.any(sd == 0.0):
        raise ValueError("ICA needs every channel to vary over time")
    x = (x - x.mean(axis=1, keepdims=True)) / sd[:, None]
    z = _whiten(x)
    W, converged = fastica_deflation(z, config.ica_seed, config.ica_max_iter, config.ica_tol)
    if converged:
        sources = W @ z
    else:
        warnings.warn(
            f"FastICA did not converge in {config.ica_max_iter} iterations; "
            "falling back to whitened principal components",
            IcaConvergenceWarning,
            stacklevel=2,
        )
        sources = z
    ratios = [spectral_peak_ratio(s, trace.sample_rate_hz, band) for s in sources]
    best = sources[int(np.argmax(ratios))]
    if best @ x[1] < 0.0:
        best = -best
    return _pulse(trace, best, "ICA")


def run_method(
    method_id: str,
    trace: RgbTrace,
    config: MethodConfig = MethodConfig(),
    band: BandLimits = DEFAULT_BAND,
) -> PulseSignal:
    key = method_id.upper()
    if key == "GREEN":
        return green(trace)
    if key == "CHROM":
        return chrom(trace, band)
    if key == "POS":
        return pos(trace, config.pos_window_s)
    if key == "ICA":
        return ica(trace, config, band)
    raise ValueError(f"unknown method {method_id!r}; choose from {', '.join(METHODS)}")
