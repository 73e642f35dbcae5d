"""Classical remote-photoplethysmography heart-rate estimation and benchmarking."""

from .evaluation import (
    EvalPair,
    EvalReport,
    EvalSettings,
    FoldPlan,
    dummy_mean_estimator,
    evaluate_method,
    evaluate_methods,
    kfold_participant_split,
    mae,
    standard_error,
)
from .hr import HrEstimate, NoPeakError, PsdEstimate, estimate_hr, gt_hr_from_ppg, welch_psd
from .ingest import DatasetManifest, FormatError, Recording, RoiSpec, load_manifest
from .methods import METHODS, MethodConfig, PulseSignal, chrom, green, ica, pos, run_method
from .signals import BandLimits, RgbTrace, SampledSeries
from .synth import ScenarioSpec, SynthConfig, scenario_corpus, skin_reflection_trace

__all__ = [
    "METHODS",
    "BandLimits",
    "DatasetManifest",
    "EvalPair",
    "EvalReport",
    "EvalSettings",
    "FoldPlan",
    "FormatError",
    "HrEstimate",
    "MethodConfig",
    "NoPeakError",
    "PsdEstimate",
    "PulseSignal",
    "Recording",
    "RgbTrace",
    "RoiSpec",
    "SampledSeries",
    "ScenarioSpec",
    "SynthConfig",
    "chrom",
    "dummy_mean_estimator",
    "estimate_hr",
    "evaluate_method",
    "evaluate_methods",
    "green",
    "gt_hr_from_ppg",
    "ica",
    "kfold_participant_split",
    "load_manifest",
    "mae",
    "pos",
    "run_method",
    "scenario_corpus",
    "skin_reflection_trace",
    "standard_error",
    "welch_psd",
]
