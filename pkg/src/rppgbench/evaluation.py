"""Metrics, baselines, participant-wise folds and report assembly."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .hr import DEFAULT_OVERLAP, DEFAULT_SEG_S, gt_hr_from_ppg, pulse_to_hr
from .ingest import SCENARIO_ORDER, UNLABELED, DatasetManifest, Recording, load_recording
from .methods import METHODS, MethodConfig, run_method
from .signals import DEFAULT_BAND, BandLimits

DUMMY = "DUMMY"
ALL = "ALL"


@dataclass(frozen=True)
class EvalPair:
    recording_id: str
    participant_id: str
    scenario: str
    hr_gt_bpm: float
    hr_est_bpm: float

    def __post_init__(self):
        for hr in (self.hr_gt_bpm, self.hr_est_bpm):
            if not 0.0 < hr < 300.0:
                raise ValueError(f"{self.recording_id}: heart rate {hr} outside (0, 300)")

    @property
    def abs_error(self) -> float:
        return abs(self.hr_gt_bpm - self.hr_est_bpm)


def _abs_errors(pairs: Iterable[EvalPair]) -> np.ndarray:
    return np.array([p.abs_error for p in pairs], dtype=np.float64)


def mae(pairs: Sequence[EvalPair]) -> float:
    """Mean absolute error over recordings."""
    if len(pairs) == 0:
        raise ValueError("MAE of an empty set")
    return float(_abs_errors(pairs).mean())


def standard_error(pairs: Sequence[EvalPair]) -> float:
    """Sample standard deviation of the absolute errors over sqrt(n)."""
    if len(pairs) < 2:
        raise ValueError("standard error needs at least 2 pairs")
    err = _abs_errors(pairs)
    return float(err.std(ddof=1) / math.sqrt(err.size))


@dataclass(frozen=True)
class DummyMeanEstimator:
    mean_bpm: float

    def __call__(self, *_args) -> float:
        return self.mean_bpm


def dummy_mean_estimator(train_hrs: Sequence[float]) -> DummyMeanEstimator:
    """Constant predictor emitting the training-set mean heart rate."""
    if len(train_hrs) == 0:
        raise ValueError("the dummy estimator needs a non-empty training set")
    return DummyMeanEstimator(float(np.mean(train_hrs)))


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: dict
    seed: int = 0

    def fold_of(self, participant_id: str) -> int:
        return self.assignments[participant_id]

    def folds(self) -> list[list[str]]:
        out: list[list[str]] = [[] for _ in range(self.k)]
        for pid, f in self.assignments.items():
            out[f].append(pid)
        return [sorted(f) for f in out]


def kfold_participant_split(participant_ids: Sequence[str], k: int, seed: int = 0) -> FoldPlan:
    """Seeded shuffle of the unique participants, then round-robin into ``k`` folds."""
    ids = sorted(set(participant_ids))
    if k < 1:
        raise ValueError("k must be positive")
    if k > len(ids):
        raise ValueError(f"k={k} exceeds the number of participants ({len(ids)})")
    order = np.random.default_rng(seed).permutation(len(ids))
    return FoldPlan(k, {ids[j]: i % k for i, j in enumerate(order)}, seed)


# --- reports -------------------------------------------------------------------


@dataclass(frozen=True)
class Aggregate:
    mae: float
    se: float | None
    n: int

    @classmethod
    def of(cls, pairs: Sequence[EvalPair]) -> Aggregate:
        return cls(mae(pairs), standard_error(pairs) if len(pairs) >= 2 else None, len(pairs))


@dataclass
class EvalReport:
    method_id: str
    dataset_name: str
    config: dict
    per_recording: list[EvalPair]
    per_scenario: dict[str, Aggregate]
    overall: Aggregate | None
    diagnostics: list[dict] = field(default_factory=list)
    folds: dict | None = None

    @property
    def config_fingerprint(self) -> str:
        return fingerprint(self.config)

    @property
    def n_excluded(self) -> int:
        return len(self.diagnostics)

    def to_json(self) -> dict:
        return {
            "method_id": self.method_id,
            "dataset_name": self.dataset_name,
            "config_fingerprint": self.config_fingerprint,
            "config": self.config,
            "overall": None if self.overall is None else asdict(self.overall),
            "per_scenario": {k: asdict(v) for k, v in self.per_scenario.items()},
            "folds": self.folds,
            "n_excluded": self.n_excluded,
            "diagnostics": self.diagnostics,
            "per_recording": [
                {**asdict(p), "abs_error": p.abs_error} for p in self.per_recording
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"

    def per_recording_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["recording_id", "participant_id", "scenario", "hr_gt_bpm",
                         "hr_est_bpm", "abs_error"])
        for p in self.per_recording:
            writer.writerow([p.recording_id, p.participant_id, p.scenario, repr(p.hr_gt_bpm),
                             repr(p.hr_est_bpm), repr(p.abs_error)])
        return buf.getvalue()


def fingerprint(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def build_report(
    method_id: str,
    dataset_name: str,
    config: dict,
    pairs: Sequence[EvalPair],
    diagnostics: Sequence[dict] = (),
    fold_plan: FoldPlan | None = None,
) -> EvalReport:
    """Aggregate scored pairs overall, per scenario and (optionally) per fold."""
    pairs = sorted(pairs, key=lambda p: p.recording_id)
    per_scenario = {}
    for label in SCENARIO_ORDER:
        group = [p for p in pairs if p.scenario == label]
        if group:
            per_scenario[label] = Aggregate.of(group)
    folds = None
    if fold_plan is not None:
        per_fold = []
        for f in range(fold_plan.k):
            group = [p for p in pairs if fold_plan.fold_of(p.participant_id) == f]
            per_fold.append(asdict(Aggregate.of(group)) if group else None)
        fold_maes = [a["mae"] for a in per_fold if a is not None]
        fold_ns = [a["n"] for a in per_fold if a is not None]
        folds = {
            "k": fold_plan.k,
            "seed": fold_plan.seed,
            "per_fold": per_fold,
            "mean_fold_mae": float(np.mean(fold_maes)) if fold_maes else None,
            "recording_weighted_fold_mae": (
                float(np.average(fold_maes, weights=fold_ns)) if fold_maes else None
            ),
        }
    return EvalReport(
        method_id=method_id,
        dataset_name=dataset_name,
        config=config,
        per_recording=list(pairs),
        per_scenario=per_scenario,
        overall=Aggregate.of(pairs) if pairs else None,
        diagnostics=sorted(diagnostics, key=lambda d: (d["recording_id"], d["stage"])),
        folds=folds,
    )


# --- evaluation driver -----------------------------------------------------------


@dataclass(frozen=True)
class EvalSettings:
    band: BandLimits = DEFAULT_BAND
    seg_len_s: float = DEFAULT_SEG_S
    overlap_frac: float = DEFAULT_OVERLAP
    method_config: MethodConfig = MethodConfig()

    def as_dict(self, method_id: str) -> dict:
        return {
            "method": method_id,
            "band_hz": [self.band.low_hz, self.band.high_hz],
            "welch_seg_s": self.seg_len_s,
            "welch_overlap": self.overlap_frac,
            **asdict(self.method_config),
        }


@dataclass(frozen=True)
class RecordingResult:
    recording: Recording
    gt_bpm: float | None
    estimates: dict
    errors: dict


def _describe(exc: Exception) -> str:
    return f"{type(exc).__name__}: {exc}"


def evaluate_recording(
    manifest: DatasetManifest, rec: Recording, methods: Sequence[str], settings: EvalSettings
) -> RecordingResult:
    """Ground truth plus every method's estimate for one recording; failures are captured."""
    try:
        trace, ppg = load_recording(manifest, rec)
        if min(trace.duration_s, ppg.duration_s) < 10.0:
            raise ValueError("recording shorter than 10 s")
        gt = gt_hr_from_ppg(ppg, settings.band, settings.seg_len_s, settings.overlap_frac).bpm
    except Exception as exc:  # noqa: BLE001 - reported as a diagnostic
        return RecordingResult(rec, None, {}, {"ground_truth": _describe(exc)})
    estimates, errors = {}, {}
    for m in methods:
        try:
            pulse = run_method(m, trace, settings.method_config, settings.band)
            estimates[m] = pulse_to_hr(
                pulse, settings.band, settings.seg_len_s, settings.overlap_frac
            ).bpm
        except Exception as exc:  # noqa: BLE001 - reported as a diagnostic
            errors[m] = _describe(exc)
    return RecordingResult(rec, gt, estimates, errors)


def _eval_job(args) -> RecordingResult:
    return evaluate_recording(*args)


def evaluate_methods(
    manifest: DatasetManifest,
    methods: Sequence[str] = METHODS,
    settings: EvalSettings = EvalSettings(),
    fold_plan: FoldPlan | None = None,
    jobs: int = 1,
    include_dummy: bool = True,
) -> dict[str, EvalReport]:
    """Evaluate several methods (and the mean-HR dummy) on every recording of a manifest.

    Recordings that fail are excluded from the affected report and listed in
    its diagnostics. Without a fold plan the dummy's training set is the whole
    corpus; with one, each fold is predicted from the other folds' mean.
    """
    methods = [m.upper() for m in methods]
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    recs = sorted(manifest.recordings, key=lambda r: r.recording_id)
    args = [(manifest, r, methods, settings) for r in recs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_eval_job, args, chunksize=4))
    else:
        results = [_eval_job(a) for a in args]

    gt_diags = [
        {"recording_id": r.recording.recording_id, "stage": "ground_truth",
         "error": r.errors["ground_truth"]}
        for r in results if r.gt_bpm is None
    ]
    scored = [r for r in results if r.gt_bpm is not None]

    reports = {}
    for m in methods:
        pairs, diags = [], list(gt_diags)
        for r in scored:
            if m in r.estimates:
                pairs.append(_pair(r, r.estimates[m]))
            else:
                diags.append({"recording_id": r.recording.recording_id, "stage": m,
                              "error": r.errors[m]})
        reports[m] = build_report(m, manifest.dataset_name, settings.as_dict(m), pairs, diags,
                                  fold_plan)

    if include_dummy and scored:
        preds = _dummy_predictions(scored, fold_plan)
        pairs = [_pair(r, preds[r.recording.recording_id]) for r in scored]
        config = {"method": DUMMY, "training": "other folds" if fold_plan else "whole dataset"}
        reports[DUMMY] = build_report(DUMMY, manifest.dataset_name, config, pairs, gt_diags,
                                      fold_plan)
    return reports


def _pair(result: RecordingResult, est: float) -> EvalPair:
    rec = result.recording
    return EvalPair(rec.recording_id, rec.participant_id, rec.scenario_label, result.gt_bpm, est)


def _dummy_predictions(scored: Sequence[RecordingResult], fold_plan: FoldPlan | None) -> dict:
    if fold_plan is None:
        model = dummy_mean_estimator([r.gt_bpm for r in scored])
        return {r.recording.recording_id: model() for r in scored}
    if fold_plan.k < 2:
        raise ValueError("fold-wise dummy training needs k >= 2")
    preds = {}
    for f in range(fold_plan.k):
        train = [r.gt_bpm for r in scored if fold_plan.fold_of(r.recording.participant_id) != f]
        model = dummy_mean_estimator(train)
        for r in scored:
            if fold_plan.fold_of(r.recording.participant_id) == f:
                preds[r.recording.recording_id] = model()
    return preds


def evaluate_method(
    manifest: DatasetManifest,
    method_id: str,
    settings: EvalSettings = EvalSettings(),
    fold_plan: FoldPlan | None = None,
    jobs: int = 1,
) -> EvalReport:
    return evaluate_methods(manifest, [method_id], settings, fold_plan, jobs, False)[
        method_id.upper()
    ]


def summary_rows(reports: dict[str, EvalReport], metric: str = "mae") -> tuple[list, list]:
    """Table rows (method, scenario columns..., ALL) in the canonical column order.

    Scenario columns appear only when some report has labeled recordings.
    """
    labels = [s for s in SCENARIO_ORDER if any(s in r.per_scenario for r in reports.values())]
    header = ["method", *labels, ALL]
    rows = []
    for name, rep in reports.items():
        cells = [getattr(rep.per_scenario[s], metric) if s in rep.per_scenario else None
                 for s in labels]
        cells.append(None if rep.overall is None else getattr(rep.overall, metric))
        rows.append([name, *cells])
    return header, rows


def summary_csv(reports: dict[str, EvalReport], metric: str = "mae") -> str:
    header, rows = summary_rows(reports, metric)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([row[0], *("" if v is None else repr(v) for v in row[1:])])
    return buf.getvalue()


def format_table(reports: dict[str, EvalReport]) -> str:
    header, rows = summary_rows(reports)
    _, se_rows = summary_rows(reports, "se")
    width = max(14, *(len(h) for h in header))
    lines = ["".join(h.ljust(width) for h in header)]
    for row, se_row in zip(rows, se_rows):
        cells = [row[0].ljust(width)]
        for v, se in zip(row[1:], se_row[1:]):
            text = "-" if v is None else f"{v:.2f}" + ("" if se is None else f" ({se:.2f})")
            cells.append(text.ljust(width))
        lines.append("".join(cells).rstrip())
    return "\n".join(lines)
