"""Synthetic rPPG scenes from the dichromatic skin-reflection model.

Each channel is rendered as

    C_i(t) = L * (u_spec * (1 + s(t)) + u_diff_i + a * p_i * w(t)) + n_i(t)

with ``s`` a slow specular (illumination) drift, ``w`` the unit-peak pulse
waveform, ``p`` the pulsatile colour direction and ``n`` sensor noise. ``L``
is chosen so the noise-free trace averages to the requested pixel level.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .ingest import (
    HR_LEVELS,
    LIGHTINGS,
    DatasetManifest,
    Recording,
    Scenario,
    write_manifest,
    write_ppg_csv,
    write_trace_csv,
)
from .signals import RgbTrace, SampledSeries

log = logging.getLogger(__name__)

PULSE_DIRECTION = np.array([0.33, 0.77, 0.53])
DIFFUSE_BASELINE = np.array([0.77, 0.51, 0.38])
SPECULAR_BASELINE = 0.1

HR_MIN_BPM, HR_MAX_BPM = 40.0, 200.0
CORPUS_HR_RANGE = (54.0, 141.0)
MAX_CLAMP_RATE = 0.10

ILLUMINATION = {"Bright": 129.7, "Dark": 33.6}
HR_MEAN = {"LowHR": 76.2, "HighHR": 87.3}
HR_SD = {"LowHR": 8.0, "HighHR": 14.0}

# sin(x) + 0.5 sin(2x) peaks at x = pi/3
_WAVE_PEAK = 3.0 * math.sqrt(3.0) / 4.0

HrTrajectory = Union[float, Sequence[tuple[float, float]]]


@dataclass(frozen=True)
class SpecularDrift:
    amplitude_frac: float = 0.02
    freq_hz: float = 0.1

    def __post_init__(self):
        if self.amplitude_frac < 0 or not 0 <= self.freq_hz <= 0.3:
            raise ValueError(f"invalid specular drift {self}")


@dataclass(frozen=True)
class SynthConfig:
    hr_bpm: HrTrajectory = 75.0
    duration_s: float = 60.0
    fps: float = 25.0
    illumination_level: float = 129.7
    pulse_amplitude_frac: float = 0.005
    specular_drift: SpecularDrift = field(default_factory=SpecularDrift)
    # residual noise on the ROI-averaged trace, in pixel units
    noise_std_pixels: float = 0.2
    quantize: bool = True
    seed: int = 0

    def __post_init__(self):
        knots = _knots(self.hr_bpm)
        if knots[:, 1].min() < HR_MIN_BPM or knots[:, 1].max() > HR_MAX_BPM:
            raise ValueError(f"heart rate must stay within [{HR_MIN_BPM}, {HR_MAX_BPM}] BPM")
        if not (0 < self.illumination_level <= 255):
            raise ValueError("illumination_level must be in (0, 255]")
        if self.duration_s <= 0 or self.pulse_amplitude_frac < 0 or self.noise_std_pixels < 0:
            raise ValueError(f"invalid synth config {self}")
        if self.fps <= 4.0 * knots[:, 1].max() / 60.0:
            raise ValueError(f"fps {self.fps} cannot represent the pulse's second harmonic")


def _knots(hr: HrTrajectory) -> np.ndarray:
    if np.isscalar(hr):
        return np.array([[0.0, float(hr)]])
    knots = np.asarray(hr, dtype=np.float64)
    if knots.ndim != 2 or knots.shape[1] != 2 or knots.shape[0] < 1:
        raise ValueError("an HR trajectory is a sequence of (time_s, bpm) knots")
    if np.any(np.diff(knots[:, 0]) <= 0):
        raise ValueError("HR trajectory knot times must increase")
    return knots


def instantaneous_hz(hr: HrTrajectory, t: np.ndarray) -> np.ndarray:
    knots = _knots(hr)
    return np.interp(t, knots[:, 0], knots[:, 1]) / 60.0


def _cycles(hr: HrTrajectory, t: np.ndarray) -> np.ndarray:
    """Exact integral of the piecewise-linear frequency from 0 to t, in cycles."""
    knots = _knots(hr)
    span = np.concatenate([t, [0.0]])
    # pad with flat segments so every query falls inside a segment
    kt = np.concatenate([[min(knots[0, 0], span.min()) - 1.0], knots[:, 0],
                         [max(knots[-1, 0], span.max()) + 1.0]])
    kf = np.concatenate([knots[:1, 1], knots[:, 1], knots[-1:, 1]]) / 60.0
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (kf[1:] + kf[:-1]) * np.diff(kt))])
    slope = np.diff(kf) / np.diff(kt)
    k = np.clip(np.searchsorted(kt, span, side="right") - 1, 0, len(kt) - 2)
    dt = span - kt[k]
    area = cum[k] + kf[k] * dt + 0.5 * slope[k] * dt**2
    return area[:-1] - area[-1]


def pulse_waveform(
    hr_trajectory: HrTrajectory,
    fps: float,
    duration_s: float,
    t0_s: float = 0.0,
    phase_rad: float = 0.0,
) -> SampledSeries:
    """Unit-peak pulse ``sin(phi) + 0.5 sin(2 phi)`` normalized to a maximum of 1.

    ``phi`` integrates the (piecewise-linear) heart-rate trajectory, so the
    instantaneous frequency follows it exactly.
    """
    knots = _knots(hr_trajectory)
    if knots[:, 1].min() < HR_MIN_BPM or knots[:, 1].max() > HR_MAX_BPM:
        raise ValueError(f"heart rate must stay within [{HR_MIN_BPM}, {HR_MAX_BPM}] BPM")
    n = int(round(duration_s * fps))
    t = t0_s + np.arange(n) / fps
    phi = 2.0 * np.pi * _cycles(hr_trajectory, t) + phase_rad
    w = (np.sin(phi) + 0.5 * np.sin(2.0 * phi)) / _WAVE_PEAK
    return SampledSeries(fps, w, t0_s)


@dataclass(frozen=True, eq=False)
class SynthOutput:
    trace: RgbTrace
    ppg: SampledSeries
    clean: np.ndarray
    clamp_rate: float
    pulse_phase_rad: float


def synthesize(config: SynthConfig) -> SynthOutput:
    """Render one recording; see the module docstring for the model."""
    rng = np.random.default_rng(config.seed)
    pulse_phase = float(rng.uniform(0.0, 2.0 * np.pi))
    drift_phase = float(rng.uniform(0.0, 2.0 * np.pi))

    ppg = pulse_waveform(config.hr_bpm, config.fps, config.duration_s, phase_rad=pulse_phase)
    t = ppg.times()
    drift = config.specular_drift
    s = drift.amplitude_frac * np.sin(2.0 * np.pi * drift.freq_hz * t + drift_phase)

    scale = config.illumination_level / (SPECULAR_BASELINE + DIFFUSE_BASELINE.mean())
    clean = scale * (
        SPECULAR_BASELINE * (1.0 + s)[:, None]
        + DIFFUSE_BASELINE[None, :]
        + config.pulse_amplitude_frac * PULSE_DIRECTION[None, :] * ppg.values[:, None]
    )
    values = clean + rng.normal(0.0, config.noise_std_pixels, size=clean.shape)
    if config.quantize:
        values = np.round(values)
    out_of_gamut = (values < 0.0) | (values > 255.0)
    clamp_rate = float(out_of_gamut.mean())
    if clamp_rate > MAX_CLAMP_RATE:
        raise ValueError(f"{clamp_rate:.1%} of samples fall outside [0, 255]")
    if clamp_rate > 0:
        log.warning("clamped %.2f%% of synthetic samples to [0, 255]", 100 * clamp_rate)
        values = np.clip(values, 0.0, 255.0)
    trace = RgbTrace(config.fps, values)
    return SynthOutput(trace, ppg, clean, clamp_rate, pulse_phase)


def skin_reflection_trace(config: SynthConfig) -> tuple[RgbTrace, SampledSeries]:
    out = synthesize(config)
    return out.trace, out.ppg


@dataclass(frozen=True)
class ScenarioSpec:
    lighting: str
    hr_level: str
    hr_mean_bpm: float
    hr_sd_bpm: float
    illumination_level: float

    def __post_init__(self):
        Scenario(self.lighting, self.hr_level)
        if self.hr_sd_bpm < 0:
            raise ValueError("hr_sd_bpm must be non-negative")

    @classmethod
    def default(cls, lighting: str, hr_level: str) -> ScenarioSpec:
        return cls(lighting, hr_level, HR_MEAN[hr_level], HR_SD[hr_level], ILLUMINATION[lighting])

    @property
    def scenario(self) -> Scenario:
        return Scenario(self.lighting, self.hr_level)


DEFAULT_SCENARIOS = tuple(
    ScenarioSpec.default(light, level) for level in HR_LEVELS for light in LIGHTINGS
)


def draw_hr(rng: np.random.Generator, mean: float, sd: float, lo: float, hi: float) -> float:
    """Normal draw truncated to [lo, hi] by rejection."""
    if sd == 0:
        return float(min(max(mean, lo), hi))
    for _ in range(10_000):
        x = rng.normal(mean, sd)
        if lo <= x <= hi:
            return float(x)
    raise ValueError(f"cannot draw HR from N({mean}, {sd}) inside [{lo}, {hi}]")


@dataclass(frozen=True)
class CorpusJob:
    recording_id: str
    participant_id: str
    spec: ScenarioSpec
    config: SynthConfig
    ppg_rate_hz: float
    ppg_lead_s: float
    out_dir: str


def _render_job(job: CorpusJob) -> tuple[Recording, float]:
    out = synthesize(job.config)
    out_dir = Path(job.out_dir)
    trace_rel = f"traces/{job.recording_id}.csv"
    ppg_rel = f"ppg/{job.recording_id}.csv"
    write_trace_csv(out.trace, out_dir / trace_rel)
    cfg = job.config
    ppg = pulse_waveform(
        cfg.hr_bpm,
        job.ppg_rate_hz,
        cfg.duration_s + 2 * job.ppg_lead_s,
        t0_s=-job.ppg_lead_s,
        phase_rad=out.pulse_phase_rad,
    )
    write_ppg_csv(ppg, out_dir / ppg_rel)
    rec = Recording(
        recording_id=job.recording_id,
        participant_id=job.participant_id,
        scenario=job.spec.scenario,
        fps=cfg.fps,
        trace_or_frames=trace_rel,
        gt_ppg=ppg_rel,
        gt_rate_hz=job.ppg_rate_hz,
    )
    return rec, float(out.trace.values.mean())


@dataclass(frozen=True)
class CorpusSummary:
    manifest: DatasetManifest
    hr_bpm: dict
    mean_pixel: dict

    def lines(self) -> list[str]:
        out = [f"{len(self.manifest.recordings)} recordings, "
               f"{len(self.manifest.participants)} participants"]
        for label, hrs in self.hr_bpm.items():
            out.append(f"  {label:14s} HR {min(hrs):6.1f}-{max(hrs):6.1f} BPM "
                       f"(mean {np.mean(hrs):.1f})  mean pixel {np.mean(self.mean_pixel[label]):.1f}")
        for lighting, level in self.mean_pixel_by_lighting().items():
            out.append(f"  {lighting:14s} mean pixel {level:.1f}")
        return out

    def mean_pixel_by_lighting(self) -> dict:
        pooled = {}
        for label, levels in self.mean_pixel.items():
            pooled.setdefault(label.split("-")[1], []).extend(levels)
        return {k: float(np.mean(v)) for k, v in pooled.items()}


def scenario_corpus(
    specs: Sequence[ScenarioSpec],
    participants: int,
    seed: int,
    out_dir,
    base: SynthConfig = SynthConfig(),
    ppg_rate_hz: float = 1000.0,
    ppg_lead_s: float = 0.5,
    jobs: int = 1,
    dataset_name: str = "synthetic",
) -> CorpusSummary:
    """Render ``participants`` x ``len(specs)`` recordings plus a manifest.

    Heart rates are drawn per recording from the scenario's normal
    distribution truncated to the corpus range. Every recording gets its own
    seed derived from ``seed``, so output does not depend on ``jobs``. The
    PPG starts ``ppg_lead_s`` before the video and ends as much after it.
    """
    if participants < 1:
        raise ValueError("need at least one participant")
    out_dir = Path(out_dir)
    (out_dir / "traces").mkdir(parents=True, exist_ok=True)
    (out_dir / "ppg").mkdir(parents=True, exist_ok=True)

    root = np.random.SeedSequence(seed)
    job_list = []
    width = max(2, len(str(participants)))
    for p, child in enumerate(root.spawn(participants), start=1):
        pid = f"p{p:0{width}d}"
        for spec, rec_seq in zip(specs, child.spawn(len(specs))):
            rng = np.random.default_rng(rec_seq)
            hr = draw_hr(rng, spec.hr_mean_bpm, spec.hr_sd_bpm, *CORPUS_HR_RANGE)
            rec_seed = int(rng.integers(0, 2**32))
            cfg = replace(base, hr_bpm=hr, illumination_level=spec.illumination_level,
                           seed=rec_seed)
            job_list.append(CorpusJob(f"{pid}_{spec.scenario.label}", pid, spec, cfg,
                                      ppg_rate_hz, ppg_lead_s, str(out_dir)))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_render_job, job_list))
    else:
        results = [_render_job(j) for j in job_list]

    manifest = DatasetManifest(dataset_name, tuple(r for r, _ in results), out_dir)
    write_manifest(manifest, out_dir / "manifest.json")

    hr_by, pix_by = {}, {}
    for job, (_, pixel) in zip(job_list, results):
        label = job.spec.scenario.label
        hr_by.setdefault(label, []).append(job.config.hr_bpm)
        pix_by.setdefault(label, []).append(pixel)
    return CorpusSummary(manifest, hr_by, pix_by)
