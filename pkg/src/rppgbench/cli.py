"""Command-line front end: ``estimate``, ``evaluate`` and ``synth``.

Exit status is 0 on success (an evaluation with failed recordings still
succeeds), 2 for bad input and 3 for a numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .evaluation import (
    EvalSettings,
    evaluate_methods,
    format_table,
    kfold_participant_split,
    summary_csv,
    summary_rows,
)
from .hr import DEFAULT_OVERLAP, DEFAULT_SEG_S, NoPeakError, pulse_to_hr
from .ingest import FormatError, RoiSpec, load_manifest, read_frame_dump, read_trace_csv
from .methods import METHODS, MethodConfig, run_method
from .signals import DEFAULT_BAND, BandLimits, bandpass
from .synth import DEFAULT_SCENARIOS, ScenarioSpec, SynthConfig, scenario_corpus

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

SVG_SALT = "rppgbench"


class InputError(Exception):
    """Bad flags or unreadable input; maps to exit status 2."""


@dataclass(frozen=True)
class RunConfig:
    methods: tuple
    band: BandLimits
    seg_len_s: float
    overlap_frac: float
    method_config: MethodConfig
    folds: int | None
    split_seed: int
    jobs: int

    @property
    def settings(self) -> EvalSettings:
        return EvalSettings(self.band, self.seg_len_s, self.overlap_frac, self.method_config)


def _run_config(args) -> RunConfig:
    """Validate every tunable before any file is read or written."""
    try:
        band = BandLimits.parse(args.band)
        methods = METHODS if args.method.lower() == "all" else (args.method.upper(),)
        if methods[0] not in METHODS:
            raise ValueError(f"unknown method {args.method!r}")
        if args.welch_seg <= 0:
            raise ValueError("--welch-seg must be positive")
        if not 0.0 <= args.welch_overlap < 1.0:
            raise ValueError("--welch-overlap must be in [0, 1)")
        if args.jobs < 1:
            raise ValueError("--jobs must be at least 1")
        folds = getattr(args, "folds", None)
        if folds is not None and folds < 2:
            raise ValueError("--folds must be at least 2")
        mc = MethodConfig(args.pos_window, args.ica_seed, args.ica_max_iter, args.ica_tol)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    return RunConfig(methods, band, args.welch_seg, args.welch_overlap, mc, folds,
                     getattr(args, "split_seed", 0), args.jobs)


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", default="all", help="GREEN, CHROM, POS, ICA or all")
    p.add_argument("--band", default=f"{DEFAULT_BAND.low_hz}:{DEFAULT_BAND.high_hz}",
                   help="heart-rate band in Hz as lo:hi")
    p.add_argument("--welch-seg", type=float, default=DEFAULT_SEG_S, help="segment length (s)")
    p.add_argument("--welch-overlap", type=float, default=DEFAULT_OVERLAP)
    p.add_argument("--pos-window", type=float, default=MethodConfig.pos_window_s)
    p.add_argument("--ica-seed", type=int, default=MethodConfig.ica_seed)
    p.add_argument("--ica-max-iter", type=int, default=MethodConfig.ica_max_iter)
    p.add_argument("--ica-tol", type=float, default=MethodConfig.ica_tol)
    p.add_argument("--jobs", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rppgbench", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="heart rate of one trace CSV or frame directory")
    est.add_argument("input", type=Path)
    _add_pipeline_flags(est)
    est.add_argument("--fps", type=float, default=25.0, help="frame rate of a frame directory")
    est.add_argument("--roi", default="full-frame", help="x,y,w,h or full-frame")
    est.add_argument("--downsample", type=int, default=None, help="area-downsample frames to NxN")
    est.add_argument("--out", type=Path, default=None, help="directory for PSD CSVs and plots")
    est.add_argument("--plot", action="store_true", help="write an SVG of pulse and spectrum")

    ev = sub.add_parser("evaluate", help="benchmark methods on a dataset manifest")
    ev.add_argument("manifest", type=Path)
    _add_pipeline_flags(ev)
    ev.add_argument("--folds", type=int, default=None)
    ev.add_argument("--split-seed", type=int, default=0)
    ev.add_argument("--out", type=Path, default=Path("report"))
    ev.add_argument("--plot", action="store_true", help="write an SVG bar chart of MAE")

    sy = sub.add_parser("synth", help="render a synthetic scenario corpus")
    sy.add_argument("--out", type=Path, required=True)
    sy.add_argument("--participants", type=int, default=45)
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--scenarios", type=Path, default=None,
                    help="JSON list of scenario objects (defaults: the four standard ones)")
    sy.add_argument("--duration", type=float, default=SynthConfig.duration_s)
    sy.add_argument("--fps", type=float, default=SynthConfig.fps)
    sy.add_argument("--noise", type=float, default=SynthConfig.noise_std_pixels)
    sy.add_argument("--jobs", type=int, default=1)
    return parser


# --- estimate ----------------------------------------------------------------


def _load_trace(args):
    path: Path = args.input
    if not path.exists():
        raise InputError(f"no such file or directory: {path}")
    try:
        if path.is_dir():
            return read_frame_dump(path, RoiSpec.parse(args.roi), args.downsample, fps=args.fps)
        return read_trace_csv(path)
    except (FormatError, ValueError, OSError) as exc:
        raise InputError(str(exc)) from exc


def cmd_estimate(args) -> int:
    cfg = _run_config(args)
    trace = _load_trace(args)
    status = EXIT_OK
    results = {}
    for m in cfg.methods:
        try:
            pulse = run_method(m, trace, cfg.method_config, cfg.band)
            est = pulse_to_hr(pulse, cfg.band, cfg.seg_len_s, cfg.overlap_frac)
        except (NoPeakError, FloatingPointError, ZeroDivisionError, np.linalg.LinAlgError) as exc:
            print(f"{m}: failed ({exc})", file=sys.stderr)
            status = max(status, EXIT_NUMERIC)
            continue
        except ValueError as exc:
            print(f"{m}: invalid input ({exc})", file=sys.stderr)
            status = max(status, EXIT_INPUT)
            continue
        results[m] = (pulse, est)
        print(f"{m}: {est.bpm:.2f} BPM  SNR {est.snr_db:.2f} dB")

    if args.out is not None or args.plot:
        out = args.out or Path(".")
        out.mkdir(parents=True, exist_ok=True)
        if args.out is not None:
            for m, (_, est) in results.items():
                write_psd_csv(out / f"psd_{m}.csv", est)
        if args.plot and results:
            plot_estimates(out / "estimate.svg", results, cfg.band)
    return status


def write_psd_csv(path: Path, est) -> None:
    psd = est.psd
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# peak_hz={est.peak_hz!r}\n# bpm={est.bpm!r}\n")
        fh.write("freq_hz,density\n")
        for f, d in zip(psd.freqs_hz, psd.density):
            fh.write(f"{f!r},{d!r}\n")


def _save_svg(fig, path: Path) -> None:
    import matplotlib

    with matplotlib.rc_context({"svg.hashsalt": SVG_SALT}):
        fig.savefig(path, format="svg", metadata={"Date": None})


def plot_estimates(path: Path, results: dict, band: BandLimits) -> None:
    """Filtered pulse per method (left) and its PSD with the chosen peak (right)."""
    from matplotlib.figure import Figure

    fig = Figure(figsize=(10, 2.2 * len(results)))
    axes = fig.subplots(len(results), 2, squeeze=False)
    for row, (m, (pulse, est)) in zip(axes, results.items()):
        filtered = bandpass(pulse, band)
        row[0].plot(filtered.times(), filtered.values, lw=0.8)
        row[0].set_ylabel(m)
        row[0].set_xlabel("time (s)")
        mask = est.psd.in_band(band)
        row[1].plot(60.0 * est.psd.freqs_hz[mask], est.psd.density[mask], lw=0.8)
        row[1].axvline(est.bpm, color="C3", ls="--")
        row[1].annotate(f"{est.bpm:.1f} BPM", (est.bpm, est.peak_density))
        row[1].set_xlabel("BPM")
    fig.tight_layout()
    _save_svg(fig, path)


# --- evaluate ----------------------------------------------------------------


def cmd_evaluate(args) -> int:
    cfg = _run_config(args)
    try:
        manifest = load_manifest(args.manifest)
    except FileNotFoundError as exc:
        raise InputError(f"no such file: {args.manifest}") from exc
    except (FormatError, OSError) as exc:
        raise InputError(str(exc)) from exc
    plan = None
    if cfg.folds is not None:
        try:
            plan = kfold_participant_split(manifest.participants, cfg.folds, cfg.split_seed)
        except ValueError as exc:
            raise InputError(str(exc)) from exc

    reports = evaluate_methods(manifest, cfg.methods, cfg.settings, plan, cfg.jobs)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    for name, rep in reports.items():
        (out / f"{name}.json").write_text(rep.dumps())
        (out / f"{name}_recordings.csv").write_text(rep.per_recording_csv())
    (out / "summary.csv").write_text(summary_csv(reports, "mae"))
    (out / "summary_se.csv").write_text(summary_csv(reports, "se"))
    if args.plot:
        plot_summary(out / "summary.svg", reports)

    print(format_table(reports))
    for name, rep in reports.items():
        if rep.folds is not None and rep.folds["mean_fold_mae"] is not None:
            print(f"{name}: mean fold MAE {rep.folds['mean_fold_mae']:.4f} over {rep.folds['k']} folds")
    excluded = {name: rep.n_excluded for name, rep in reports.items() if rep.n_excluded}
    if excluded:
        print("excluded recordings: " + ", ".join(f"{k}={v}" for k, v in excluded.items()))
    return EXIT_OK


def plot_summary(path: Path, reports: dict) -> None:
    from matplotlib.figure import Figure

    header, rows = summary_rows(reports)
    cols = header[1:]
    fig = Figure(figsize=(1.6 * len(cols) + 2, 3.5))
    ax = fig.subplots()
    width = 0.8 / len(rows)
    x = np.arange(len(cols))
    for i, row in enumerate(rows):
        vals = [np.nan if v is None else v for v in row[1:]]
        ax.bar(x + i * width, vals, width, label=row[0])
    ax.set_xticks(x + 0.4 - width / 2, cols)
    ax.set_ylabel("MAE (BPM)")
    ax.legend(fontsize="small")
    fig.tight_layout()
    _save_svg(fig, path)


# --- synth -------------------------------------------------------------------


def _load_scenarios(path: Path | None) -> tuple:
    if path is None:
        return DEFAULT_SCENARIOS
    try:
        items = json.loads(path.read_text())
        return tuple(ScenarioSpec(**item) for item in items)
    except FileNotFoundError as exc:
        raise InputError(f"no such file: {path}") from exc
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from exc


def cmd_synth(args) -> int:
    specs = _load_scenarios(args.scenarios)
    try:
        if args.participants < 1:
            raise ValueError("--participants must be at least 1")
        if args.jobs < 1:
            raise ValueError("--jobs must be at least 1")
        base = SynthConfig(duration_s=args.duration, fps=args.fps,
                           noise_std_pixels=args.noise)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        summary = scenario_corpus(specs, args.participants, args.seed, args.out, base,
                                  jobs=args.jobs)
    except OSError as exc:
        raise InputError(f"cannot write to {args.out}: {exc}") from exc
    print("\n".join(summary.lines()))
    return EXIT_OK


COMMANDS = {"estimate": cmd_estimate, "evaluate": cmd_evaluate, "synth": cmd_synth}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (FloatingPointError, ZeroDivisionError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
