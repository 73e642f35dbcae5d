"""File formats, dataset manifests, frame-dump ingestion and stream alignment.

Formats
-------
Trace CSV::

    # fps=25.0
    # t0=0.0
    r,g,b            (one row per frame)

PPG CSV::

    # rate_hz=1000.0
    # t0=0.0
    value            (one row per sample)

Frame dump: a directory of ``frame_<index>.rgb8`` files, each holding the
magic ``RGB8``, width and height as little-endian uint32, then
``height * width * 3`` interleaved 8-bit RGB bytes.

Manifest: a JSON object with ``dataset_name`` and ``recordings``; see
:class:`Recording` for the per-recording keys. Relative paths resolve
against the manifest's directory.
"""

from __future__ import annotations

import io
import json
import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .signals import RgbTrace, SampledSeries

LIGHTINGS = ("Bright", "Dark")
HR_LEVELS = ("LowHR", "HighHR")
# column order of the per-scenario report tables
SCENARIO_ORDER = ("LowHR-Bright", "LowHR-Dark", "HighHR-Bright", "HighHR-Dark")
UNLABELED = "unlabeled"

FRAME_MAGIC = b"RGB8"
FRAME_HEADER = struct.Struct("<4sII")
FRAME_RE = re.compile(r"^frame_(\d+)\.rgb8$")

MIN_OVERLAP_S = 10.0


class FormatError(ValueError):
    """Malformed input file. The message names the file and, where known, the line."""

    def __init__(self, path, message: str, line: int | None = None):
        where = f"{path}:{line}" if line is not None else f"{path}"
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line


# --- CSV series ----------------------------------------------------------------


def _read_csv_series(path, n_cols: int, rate_key: str) -> tuple[dict, np.ndarray]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(path, f"cannot read file ({exc.strerror or exc})") from exc
    lines = text.split("\n")
    header: dict[str, float] = {}
    first_data = len(lines)
    for i, line in enumerate(lines):
        if not line.startswith("#"):
            first_data = i
            break
        body = line[1:].strip()
        key, sep, val = body.partition("=")
        if not sep:
            raise FormatError(path, f"malformed header line {line!r}", i + 1)
        try:
            header[key.strip()] = float(val)
        except ValueError:
            raise FormatError(path, f"non-numeric header value {val!r}", i + 1) from None
    if rate_key not in header:
        raise FormatError(path, f"missing '# {rate_key}=' header")
    rate = header[rate_key]
    if not (math.isfinite(rate) and rate > 0):
        raise FormatError(path, f"{rate_key} must be a positive number, got {rate}")
    if not math.isfinite(header.setdefault("t0", 0.0)):
        raise FormatError(path, "t0 must be finite")

    body_lines = lines[first_data:]
    while body_lines and body_lines[-1].strip() == "":
        body_lines.pop()
    if not body_lines:
        raise FormatError(path, "no data rows")
    try:
        data = np.loadtxt(io.StringIO("\n".join(body_lines)), delimiter=",", ndmin=2)
        if data.shape[1] != n_cols or data.shape[0] != len(body_lines):
            raise ValueError
    except ValueError:
        _locate_bad_row(path, body_lines, first_data, n_cols)
        raise FormatError(path, "unparseable data section") from None
    if not np.all(np.isfinite(data)):
        bad = int(np.argwhere(~np.isfinite(data))[0][0])
        raise FormatError(path, "non-finite value", first_data + bad + 1)
    return header, data


def _locate_bad_row(path, rows: list[str], offset: int, n_cols: int) -> None:
    for i, row in enumerate(rows):
        cells = row.split(",")
        lineno = offset + i + 1
        if len(cells) != n_cols:
            raise FormatError(path, f"expected {n_cols} columns, found {len(cells)}", lineno)
        for cell in cells:
            try:
                float(cell)
            except ValueError:
                raise FormatError(path, f"non-numeric cell {cell.strip()!r}", lineno) from None


def read_trace_csv(path) -> RgbTrace:
    header, data = _read_csv_series(path, 3, "fps")
    try:
        return RgbTrace(header["fps"], data, header["t0"])
    except ValueError as exc:
        raise FormatError(path, str(exc)) from None


def read_ppg_csv(path) -> SampledSeries:
    header, data = _read_csv_series(path, 1, "rate_hz")
    return SampledSeries(header["rate_hz"], data[:, 0], header["t0"])


def _write_csv(path, header: dict, data: np.ndarray) -> None:
    buf = io.StringIO()
    for key, val in header.items():
        buf.write(f"# {key}={float(val)!r}\n")
    np.savetxt(buf, data, fmt="%.17g", delimiter=",")
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="\n")


def write_trace_csv(trace: RgbTrace, path) -> None:
    _write_csv(path, {"fps": trace.sample_rate_hz, "t0": trace.t0_s}, trace.values)


def write_ppg_csv(ppg: SampledSeries, path) -> None:
    _write_csv(path, {"rate_hz": ppg.sample_rate_hz, "t0": ppg.t0_s}, ppg.values[:, None])


# --- frame dumps ---------------------------------------------------------------


@dataclass(frozen=True)
class RoiSpec:
    """Pixel rectangle (x, y, w, h); leave all fields None for the full frame."""

    x: int | None = None
    y: int | None = None
    w: int | None = None
    h: int | None = None

    @property
    def full_frame(self) -> bool:
        return self.x is None

    @classmethod
    def parse(cls, text: str | None) -> RoiSpec:
        if text is None or text == "full-frame":
            return cls()
        try:
            x, y, w, h = (int(p) for p in text.split(","))
        except ValueError:
            raise ValueError(f"ROI must be 'x,y,w,h' or 'full-frame', got {text!r}") from None
        return cls(x, y, w, h)

    def apply(self, frame: np.ndarray) -> np.ndarray:
        if self.full_frame:
            return frame
        height, width = frame.shape[:2]
        if self.w <= 0 or self.h <= 0 or self.x < 0 or self.y < 0:
            raise ValueError(f"invalid ROI {self}")
        if self.x + self.w > width or self.y + self.h > height:
            raise ValueError(f"ROI {self} exceeds the {width}x{height} frame")
        return frame[self.y : self.y + self.h, self.x : self.x + self.w]


def write_frame(path, frame: np.ndarray) -> None:
    frame = np.asarray(frame)
    if frame.dtype != np.uint8 or frame.ndim != 3 or frame.shape[2] != 3:
        raise ValueError("frames must be uint8 arrays of shape (height, width, 3)")
    h, w = frame.shape[:2]
    Path(path).write_bytes(FRAME_HEADER.pack(FRAME_MAGIC, w, h) + frame.tobytes())


def write_frame_dump(frames, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        write_frame(directory / f"frame_{i:06d}.rgb8", frame)


def read_frame(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < FRAME_HEADER.size:
        raise FormatError(path, "truncated frame header")
    magic, w, h = FRAME_HEADER.unpack_from(raw)
    if magic != FRAME_MAGIC:
        raise FormatError(path, f"bad magic {magic!r}")
    expected = FRAME_HEADER.size + w * h * 3
    if len(raw) != expected:
        raise FormatError(path, f"expected {expected} bytes for {w}x{h}, found {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, offset=FRAME_HEADER.size).reshape(h, w, 3)


def area_weights(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) matrix averaging input cells by their overlap with each output cell."""
    edges = np.linspace(0.0, n_in, n_out + 1)
    lo = np.maximum(edges[:-1, None], np.arange(n_in)[None, :])
    hi = np.minimum(edges[1:, None], np.arange(1, n_in + 1)[None, :])
    weights = np.clip(hi - lo, 0.0, None)
    return weights / weights.sum(axis=1, keepdims=True)


def area_downsample(frame: np.ndarray, size: int) -> np.ndarray:
    """Area-average an (H, W, 3) frame to (size, size, 3)."""
    h, w = frame.shape[:2]
    rows = area_weights(h, size)
    cols = area_weights(w, size)
    tall = np.tensordot(rows, frame.astype(np.float64), axes=(1, 0))
    return np.einsum("jw,iwc->ijc", cols, tall)


def list_frames(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FormatError(directory, "frame dump directory not found")
    found = []
    for p in directory.iterdir():
        m = FRAME_RE.match(p.name)
        if m:
            found.append((int(m.group(1)), p))
    found.sort()
    return [p for _, p in found]


def read_frame_dump(
    directory,
    roi: RoiSpec = RoiSpec(),
    downsample_to: int | None = None,
    fps: float = 25.0,
    t0_s: float = 0.0,
) -> RgbTrace:
    """Spatial-mean RGB trace from a directory of raw frames.

    Frames are taken in ascending index order. Each is optionally
    area-downsampled to ``downsample_to`` x ``downsample_to`` and then
    averaged over ``roi`` (in the coordinates of the downsampled frame).
    """
    paths = list_frames(directory)
    if len(paths) < 2:
        raise FormatError(directory, f"need at least 2 frames, found {len(paths)}")
    samples = np.empty((len(paths), 3))
    shape = None
    for i, p in enumerate(paths):
        frame = read_frame(p)
        if shape is None:
            shape = frame.shape
        elif frame.shape != shape:
            raise FormatError(p, f"frame is {frame.shape[1]}x{frame.shape[0]}, "
                                 f"expected {shape[1]}x{shape[0]}")
        if downsample_to is not None:
            frame = area_downsample(frame, downsample_to)
        samples[i] = roi.apply(frame).reshape(-1, 3).mean(axis=0)
    return RgbTrace(fps, samples, t0_s)


# --- alignment -----------------------------------------------------------------


def _trim_to_span(series, start: float, end: float):
    rate = series.sample_rate_hz
    eps = 1e-9
    first = max(math.ceil((start - series.t0_s) * rate - eps), 0)
    last = min(math.floor((end - series.t0_s) * rate + eps), len(series) - 1)
    return first, last + 1


def align(
    trace: RgbTrace,
    ppg: SampledSeries,
    trace_t0_s: float | None = None,
    ppg_t0_s: float | None = None,
) -> tuple[RgbTrace, SampledSeries]:
    """Trim video trace and PPG to their common time span.

    Start times default to each stream's own ``t0_s``. Samples outside the
    overlap are dropped; nothing is interpolated.
    """
    if trace_t0_s is not None:
        trace = RgbTrace(trace.sample_rate_hz, trace.values, trace_t0_s)
    if ppg_t0_s is not None:
        ppg = SampledSeries(ppg.sample_rate_hz, ppg.values, ppg_t0_s)
    start = max(trace.t0_s, ppg.t0_s)
    end = min(trace.t_end_s, ppg.t_end_s)
    if end - start < MIN_OVERLAP_S:
        raise ValueError(
            f"video and PPG overlap for {max(end - start, 0.0):.3f} s; need {MIN_OVERLAP_S} s"
        )
    a, b = _trim_to_span(trace, start, end)
    c, d = _trim_to_span(ppg, start, end)
    trace_out = trace if (a, b) == (0, len(trace)) else trace.slice(a, b)
    ppg_out = (
        ppg
        if (c, d) == (0, len(ppg))
        else SampledSeries(ppg.sample_rate_hz, ppg.values[c:d], ppg.t0_s + c / ppg.sample_rate_hz)
    )
    return trace_out, ppg_out


# --- manifest ------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    lighting: str
    hr_level: str

    def __post_init__(self):
        if self.lighting not in LIGHTINGS:
            raise ValueError(f"lighting must be one of {LIGHTINGS}, got {self.lighting!r}")
        if self.hr_level not in HR_LEVELS:
            raise ValueError(f"hr_level must be one of {HR_LEVELS}, got {self.hr_level!r}")

    @property
    def label(self) -> str:
        return f"{self.hr_level}-{self.lighting}"


@dataclass(frozen=True)
class Recording:
    recording_id: str
    participant_id: str
    scenario: Scenario | None
    fps: float
    trace_or_frames: str
    gt_ppg: str
    gt_rate_hz: float
    trace_t0_s: float = 0.0
    ppg_t0_s: float = 0.0

    def __post_init__(self):
        if not (self.fps > 0 and self.gt_rate_hz > 0):
            raise ValueError(f"{self.recording_id}: fps and gt_rate_hz must be positive")

    @property
    def scenario_label(self) -> str:
        return UNLABELED if self.scenario is None else self.scenario.label

    def to_json(self) -> dict:
        out = {k: getattr(self, k) for k in _RECORDING_KEYS}
        out["scenario"] = (
            UNLABELED
            if self.scenario is None
            else {"lighting": self.scenario.lighting, "hr_level": self.scenario.hr_level}
        )
        return out


_RECORDING_KEYS = (
    "recording_id",
    "participant_id",
    "scenario",
    "fps",
    "trace_or_frames",
    "gt_ppg",
    "gt_rate_hz",
    "trace_t0_s",
    "ppg_t0_s",
)
_RECORDING_REQUIRED = _RECORDING_KEYS[:7]


@dataclass(frozen=True)
class DatasetManifest:
    dataset_name: str
    recordings: tuple[Recording, ...]
    base_dir: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        ids = [r.recording_id for r in self.recordings]
        if len(set(ids)) != len(ids):
            raise ValueError("recording_ids must be unique")

    def resolve(self, relpath: str) -> Path:
        p = Path(relpath)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def participants(self) -> list[str]:
        return sorted({r.participant_id for r in self.recordings})

    def to_json(self) -> dict:
        return {
            "dataset_name": self.dataset_name,
            "recordings": [r.to_json() for r in self.recordings],
        }


def _check_keys(obj, allowed, required, where: str) -> None:
    if not isinstance(obj, dict):
        raise ValueError(f"{where}: expected a JSON object")
    unknown = set(obj) - set(allowed)
    if unknown:
        raise ValueError(f"{where}: unknown keys {sorted(unknown)}")
    missing = [k for k in required if k not in obj]
    if missing:
        raise ValueError(f"{where}: missing keys {missing}")


def _parse_recording(obj, where: str) -> Recording:
    _check_keys(obj, _RECORDING_KEYS, _RECORDING_REQUIRED, where)
    scen = obj["scenario"]
    if scen == UNLABELED:
        scenario = None
    else:
        _check_keys(scen, ("lighting", "hr_level"), ("lighting", "hr_level"), f"{where}.scenario")
        scenario = Scenario(scen["lighting"], scen["hr_level"])
    for key in ("recording_id", "participant_id", "trace_or_frames", "gt_ppg"):
        if not isinstance(obj[key], str):
            raise ValueError(f"{where}.{key}: expected a string")
    return Recording(
        recording_id=obj["recording_id"],
        participant_id=obj["participant_id"],
        scenario=scenario,
        fps=float(obj["fps"]),
        trace_or_frames=obj["trace_or_frames"],
        gt_ppg=obj["gt_ppg"],
        gt_rate_hz=float(obj["gt_rate_hz"]),
        trace_t0_s=float(obj.get("trace_t0_s", 0.0)),
        ppg_t0_s=float(obj.get("ppg_t0_s", 0.0)),
    )


def parse_manifest(obj, base_dir=".") -> DatasetManifest:
    _check_keys(obj, ("dataset_name", "recordings"), ("dataset_name", "recordings"), "manifest")
    if not isinstance(obj["recordings"], list):
        raise ValueError("manifest.recordings: expected a list")
    recs = tuple(
        _parse_recording(r, f"manifest.recordings[{i}]") for i, r in enumerate(obj["recordings"])
    )
    return DatasetManifest(str(obj["dataset_name"]), recs, Path(base_dir))


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise FormatError(path, f"cannot read manifest ({exc.strerror or exc})") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(path, f"invalid JSON: {exc.msg}", exc.lineno) from None
    try:
        return parse_manifest(obj, path.parent)
    except ValueError as exc:
        raise FormatError(path, str(exc)) from None


def write_manifest(manifest: DatasetManifest, path) -> None:
    text = json.dumps(manifest.to_json(), indent=2, sort_keys=False) + "\n"
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def load_recording(manifest: DatasetManifest, rec: Recording, roi: RoiSpec = RoiSpec(),
                   downsample_to: int | None = None) -> tuple[RgbTrace, SampledSeries]:
    """Read one recording's trace and PPG, apply the manifest clock offsets and align them."""
    src = manifest.resolve(rec.trace_or_frames)
    if src.is_dir():
        trace = read_frame_dump(src, roi, downsample_to, fps=rec.fps)
    else:
        trace = read_trace_csv(src)
        if not math.isclose(trace.sample_rate_hz, rec.fps, rel_tol=1e-9):
            raise FormatError(src, f"fps {trace.sample_rate_hz} disagrees with manifest {rec.fps}")
    ppg = read_ppg_csv(manifest.resolve(rec.gt_ppg))
    if not math.isclose(ppg.sample_rate_hz, rec.gt_rate_hz, rel_tol=1e-9):
        raise FormatError(rec.gt_ppg, f"rate {ppg.sample_rate_hz} disagrees with manifest "
                                      f"{rec.gt_rate_hz}")
    return align(trace, ppg, trace.t0_s + rec.trace_t0_s, ppg.t0_s + rec.ppg_t0_s)
