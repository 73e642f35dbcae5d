import numpy as np
import pytest
import scipy.signal
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import dft_hann_periodogram, tone
from rppgbench.hr import (
    MAX_BIN_HZ,
    NoPeakError,
    estimate_hr,
    gt_hr_from_ppg,
    hann,
    padded_nfft,
    welch_psd,
    windowed_hr,
)
from rppgbench.signals import BandLimits, SampledSeries, resample
from rppgbench.synth import pulse_waveform

BAND = BandLimits(0.6, 3.0)


class TestWelch:
    def test_single_segment_matches_dft(self):
        x = np.random.default_rng(3).normal(size=200)
        psd = welch_psd(SampledSeries(25.0, x), seg_len_s=8.0, nfft=0)
        freqs, ref = dft_hann_periodogram(x, 25.0)
        np.testing.assert_allclose(psd.freqs_hz, freqs)
        np.testing.assert_allclose(psd.density, ref, rtol=1e-9, atol=1e-12 * ref.max())

    def test_matches_scipy_welch(self):
        x = np.random.default_rng(4).normal(size=1500)
        psd = welch_psd(SampledSeries(25.0, x), 20.0, 0.5, nfft=0)
        f, p = scipy.signal.welch(x, 25.0, window="hann", nperseg=500, noverlap=250,
                                  detrend="constant")
        np.testing.assert_allclose(psd.freqs_hz, f)
        np.testing.assert_allclose(psd.density, p, rtol=1e-9)

    def test_padding_gives_fine_bins(self):
        psd = welch_psd(tone(1.25))
        assert psd.bin_hz <= MAX_BIN_HZ
        assert padded_nfft(500, 25.0) == 4096

    def test_tone_argmax(self):
        psd = welch_psd(tone(1.25))
        assert abs(psd.freqs_hz[np.argmax(psd.density)] - 1.25) <= psd.bin_hz

    def test_white_noise_power(self):
        x = np.random.default_rng(5).normal(0, 2.0, size=20000)
        psd = welch_psd(SampledSeries(25.0, x), seg_len_s=20.0)
        assert np.sum(psd.density) * psd.bin_hz == pytest.approx(4.0, rel=0.05)

    def test_more_segments_less_variance(self):
        x = np.random.default_rng(6).normal(size=4500)
        one = welch_psd(SampledSeries(25.0, x[:800]), seg_len_s=32.0, overlap_frac=0.0, nfft=0)
        # 800 + 7 hops of 400
        eight = welch_psd(SampledSeries(25.0, x[:3600]), seg_len_s=32.0, overlap_frac=0.5, nfft=0)
        assert eight.n_segments == 8 and one.n_segments == 1
        spread = [np.var(p.density / p.density.mean()) for p in (eight, one)]
        assert spread[0] < spread[1]

    def test_short_segment(self):
        with pytest.raises(ValueError):
            welch_psd(SampledSeries(25.0, np.zeros(5)))

    def test_periodic_hann(self):
        np.testing.assert_allclose(hann(16), scipy.signal.get_window("hann", 16))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), k=st.floats(0.01, 100))
    def test_sign_and_scale(self, seed, k):
        x = np.random.default_rng(seed).normal(size=300)
        base = welch_psd(SampledSeries(25.0, x), 8.0)
        neg = welch_psd(SampledSeries(25.0, -x), 8.0)
        scaled = welch_psd(SampledSeries(25.0, k * x), 8.0)
        np.testing.assert_array_equal(neg.density, base.density)
        np.testing.assert_allclose(scaled.density, k * k * base.density, rtol=1e-9,
                                   atol=1e-12 * k * k * base.density.max())
        assert np.all(base.density >= 0)
        assert np.allclose(np.diff(base.freqs_hz), base.bin_hz)


class TestEstimate:
    def test_pure_tone(self):
        est = estimate_hr(tone(1.25))
        assert abs(est.bpm - 75.0) <= 60 * est.psd.bin_hz
        assert BAND.low_hz <= est.peak_hz <= BAND.high_hz
        assert est.snr_db > 10

    def test_stronger_tone_wins(self):
        s = SampledSeries(25.0, tone(1.0).values + tone(2.0, amp=0.5).values)
        assert estimate_hr(s).bpm == pytest.approx(60.0, abs=0.5)

    def test_harmonic_outside_band(self):
        w = pulse_waveform(141.0, 25.0, 60.0)
        assert estimate_hr(w).bpm == pytest.approx(141.0, abs=1.0)

    def test_tie_goes_low(self):
        from rppgbench.hr import PsdEstimate, hr_from_psd

        freqs = np.linspace(0, 5, 51)
        dens = np.zeros(51)
        dens[[10, 20]] = 1.0
        est = hr_from_psd(PsdEstimate(freqs, dens, 0.1, 10, 1, 10.0), BAND)
        assert est.bpm == pytest.approx(60.0)

    def test_flat_spectrum_has_no_peak(self):
        with pytest.raises(NoPeakError):
            estimate_hr(SampledSeries(25.0, np.zeros(1500)))

    def test_empty_band(self):
        with pytest.raises(NoPeakError):
            estimate_hr(tone(1.0), BandLimits(1.001, 1.002), seg_len_s=1.0)

    @settings(max_examples=30, deadline=None)
    @given(f=st.floats(0.9, 2.35), phase=st.floats(0, 6.28), k=st.floats(0.1, 50))
    def test_tones_within_half_bpm_and_sign_scale_free(self, f, phase, k):
        s = tone(f, phase=phase)
        est = estimate_hr(s)
        assert abs(est.bpm - 60 * f) <= 0.5
        assert estimate_hr(SampledSeries(25.0, -k * s.values)).bpm == est.bpm


class TestGroundTruth:
    def test_clean_ppg_1000hz(self):
        ppg = pulse_waveform(76.2, 1000.0, 60.0)
        assert gt_hr_from_ppg(ppg).bpm == pytest.approx(76.2, abs=0.5)

    def test_sensor_rates_agree(self):
        rates = [1000.0, 256.0, 60.0]
        bpms = [gt_hr_from_ppg(pulse_waveform(87.3, r, 60.0)) for r in rates]
        bin_bpm = 60 * bpms[0].psd.bin_hz
        assert max(b.bpm for b in bpms) - min(b.bpm for b in bpms) <= bin_bpm

    def test_constant_ppg(self):
        with pytest.raises(NoPeakError):
            gt_hr_from_ppg(SampledSeries(100.0, np.full(6000, 3.0)))

    def test_low_rate_rejected(self):
        with pytest.raises(ValueError):
            gt_hr_from_ppg(SampledSeries(8.0, np.random.default_rng(0).normal(size=500)))

    def test_resampled_equals_direct_path(self):
        ppg = pulse_waveform(100.0, 250.0, 60.0)
        direct = gt_hr_from_ppg(ppg)
        again = gt_hr_from_ppg(resample(ppg, 25.0))
        assert direct.bpm == pytest.approx(again.bpm, abs=60 * direct.psd.bin_hz)


class TestWindowed:
    def test_ramp_is_nondecreasing(self):
        w = pulse_waveform([(0.0, 70.0), (60.0, 90.0)], 25.0, 60.0)
        traj = windowed_hr(w, 10.0, 1.0)
        bpms = [x.bpm for x in traj]
        assert len(traj) > 30
        assert all(b >= a for a, b in zip(bpms, bpms[1:]))
        assert 70 <= bpms[0] < bpms[-1] <= 90

    def test_constant(self):
        traj = windowed_hr(pulse_waveform(84.0, 25.0, 40.0))
        assert all(abs(x.bpm - 84.0) < 1.0 for x in traj)
