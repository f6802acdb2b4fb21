"""Core domain types, validation, and bit-exact session serialization.

A recording session pairs a low-rate skin-conductance trace with a
single-channel thermal frame stream, both annotated with a task schedule
that supplies the stress / non-stress labels. Everything downstream
(windowing, training, evaluation) consumes these types.

On-disk session layout (one directory per session):

    manifest.json   structured manifest (schedule, rates, shapes, seed)
    frames.bin      16-byte header + float32 little-endian frames, row-major
    mask.bin        same header scheme, uint8 body mask per frame
    parts.bin       same header scheme, uint8 body-part labels per frame
    eda.csv         two columns ``time_s,value``, '.' decimal separator

The binary header is: magic ``THW1`` then height, width, frame count as
little-endian 32-bit unsigned integers.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

MAGIC = b"THW1"
HEADER = struct.Struct("<4sIII")

#: Body part labels used in part maps. Index 0 is background; part ids are
#: 1-based positions in this tuple.
PART_NAMES = (
    "left_face",
    "right_face",
    "left_torso",
    "right_torso",
    "left_upper_arm",
    "right_upper_arm",
    "left_forearm",
    "right_forearm",
)

FACE_PARTS = (1, 2)
FOREARM_PARTS = (7, 8)


class ValidationError(ValueError):
    """An invariant of a domain type was violated.

    ``invariant`` names the failed invariant so callers (and error
    messages) can point at the exact rule that broke.
    """

    def __init__(self, invariant: str, message: str):
        super().__init__(f"{invariant}: {message}")
        self.invariant = invariant


def _require(condition: bool, invariant: str, message: str) -> None:
    if not condition:
        raise ValidationError(invariant, message)


# ---------------------------------------------------------------------------
# Frame / window / series types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ThermalFrame:
    """One single-channel thermal frame plus its body mask.

    Pixels are normalized radiometric units (no physical calibration).
    The mask is 1 on body pixels, 0 elsewhere. Raw generated frames carry
    ambient background; after ``preprocess.apply_body_mask`` the pixels
    are exactly 0 wherever mask is 0.
    """

    pixels: np.ndarray  # (H, W) float32
    mask: np.ndarray  # (H, W) uint8

    def __post_init__(self):
        _require(self.pixels.ndim == 2, "frame_shape", "pixels must be 2-D")
        _require(
            self.mask.shape == self.pixels.shape,
            "frame_shape",
            f"mask shape {self.mask.shape} != pixel shape {self.pixels.shape}",
        )
        _require(bool(np.isfinite(self.pixels).all()), "frame_finite", "non-finite pixel value")
        _require(
            bool(np.isin(self.mask, (0, 1)).all()),
            "mask_binary",
            "mask values must be 0 or 1",
        )

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def is_masked(self) -> bool:
        """True when background pixels are exactly zero."""
        return bool((self.pixels[self.mask == 0] == 0).all())


@dataclass(frozen=True)
class ThermalWindow:
    """A fixed-length run of frames: one detection window of thermal video.

    Stored as stacked arrays for speed; ``frames`` materializes the
    per-frame view when needed.
    """

    pixels: np.ndarray  # (T, H, W) float32
    mask: np.ndarray  # (T, H, W) uint8
    start_time: float  # seconds from session start

    def __post_init__(self):
        _require(self.pixels.ndim == 3, "window_shape", "pixels must be (T, H, W)")
        _require(
            self.mask.shape == self.pixels.shape,
            "window_shape",
            "mask shape must match pixels",
        )
        _require(bool(np.isfinite(self.pixels).all()), "frame_finite", "non-finite pixel value")
        _require(
            bool(np.isin(self.mask, (0, 1)).all()),
            "mask_binary",
            "mask values must be 0 or 1",
        )

    @property
    def num_frames(self) -> int:
        return self.pixels.shape[0]

    @property
    def frames(self) -> tuple[ThermalFrame, ...]:
        return tuple(
            ThermalFrame(self.pixels[i], self.mask[i]) for i in range(self.num_frames)
        )


@dataclass(frozen=True)
class EdaSeries:
    """Skin-conductance samples for one window, at ``rate_hz``."""

    samples: np.ndarray  # (n,) float64
    rate_hz: float

    def __post_init__(self):
        _require(self.samples.ndim == 1, "eda_shape", "samples must be 1-D")
        _require(bool(np.isfinite(self.samples).all()), "eda_finite", "non-finite EDA sample")
        _require(self.rate_hz > 0, "eda_rate", "rate must be positive")


@dataclass(frozen=True)
class EdaFeatureVector:
    """Six summary statistics of one window's conductance trace."""

    mean: float
    min: float
    max: float
    median: float
    variability: float
    std: float

    def __post_init__(self):
        _require(self.min <= self.median <= self.max, "feature_order", "min <= median <= max")
        _require(self.min <= self.mean <= self.max, "feature_order", "min <= mean <= max")
        _require(self.std >= 0, "feature_nonneg", "std must be >= 0")
        _require(self.variability >= 0, "feature_nonneg", "variability must be >= 0")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.mean, self.min, self.max, self.median, self.variability, self.std],
            dtype=np.float64,
        )


@dataclass(frozen=True)
class TaskSegment:
    """One scheduled task: name, binary stress label, time extent."""

    name: str
    label: int
    start_s: float
    end_s: float

    def __post_init__(self):
        _require(self.label in (0, 1), "label_binary", f"label {self.label} not in {{0, 1}}")
        _require(self.end_s > self.start_s, "segment_extent", "end must be after start")

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class DetectionWindow:
    """One labeled sample: a thermal window, its synchronized EDA slice,
    and session metadata used for stratified evaluation."""

    thermal: ThermalWindow
    eda: EdaSeries
    label: int
    session_id: str
    participant_id: str
    distance_feet: float
    part_map: np.ndarray  # (H, W) uint8, 0 = background, 1..8 = body parts
    task_name: str = ""

    def __post_init__(self):
        _require(self.label in (0, 1), "label_binary", f"label {self.label} not in {{0, 1}}")
        _require(
            self.part_map.shape == self.thermal.pixels.shape[1:],
            "part_map_shape",
            "part map must match frame shape",
        )
        # part labels only on body pixels (checked against the first frame;
        # masks are constant within a window)
        _require(
            bool((self.thermal.mask[0][self.part_map > 0] == 1).all()),
            "part_map_on_body",
            "part map nonzero outside the body mask",
        )

    @property
    def window_id(self) -> str:
        return f"{self.session_id}:{self.thermal.start_time:g}"


@dataclass(frozen=True)
class SessionRecord:
    """A full recording session: schedule, thermal trace, EDA trace.

    ``frames``/``masks``/``parts`` are (N, H, W) stacks at ``thermal_fps``;
    ``eda`` is the raw conductance trace at ``eda_rate_hz``. Trace lengths
    must match the schedule duration times the respective rate.
    """

    participant_id: str
    distance_feet: float
    task_schedule: tuple[TaskSegment, ...]
    frames: np.ndarray  # (N, H, W) float32
    masks: np.ndarray  # (N, H, W) uint8
    parts: np.ndarray  # (N, H, W) uint8
    eda: np.ndarray  # (M,) float64
    thermal_fps: int
    eda_rate_hz: int
    seed: int

    def __post_init__(self):
        sched = self.task_schedule
        _require(len(sched) > 0, "schedule_nonempty", "schedule must have at least one segment")
        for prev, cur in zip(sched, sched[1:]):
            _require(
                cur.start_s >= prev.end_s,
                "schedule_overlap",
                f"segment '{cur.name}' starts at {cur.start_s} before "
                f"'{prev.name}' ends at {prev.end_s}",
            )
        _require(
            self.frames.ndim == 3 and self.masks.shape == self.frames.shape
            and self.parts.shape == self.frames.shape,
            "trace_shape",
            "frames, masks, parts must share one (N, H, W) shape",
        )
        _require(bool(np.isfinite(self.frames).all()), "frame_finite", "non-finite pixel value")
        _require(bool(np.isin(self.masks, (0, 1)).all()), "mask_binary", "mask values must be 0 or 1")
        _require(
            bool((self.masks[self.parts > 0] == 1).all()),
            "part_map_on_body",
            "part labels present outside the body mask",
        )
        n_expected = round(self.duration_s * self.thermal_fps)
        _require(
            self.frames.shape[0] == n_expected,
            "trace_length",
            f"{self.frames.shape[0]} frames but schedule implies {n_expected}",
        )
        m_expected = round(self.duration_s * self.eda_rate_hz)
        _require(
            self.eda.shape == (m_expected,),
            "trace_length",
            f"{self.eda.shape[0]} EDA samples but schedule implies {m_expected}",
        )
        _require(bool(np.isfinite(self.eda).all()), "eda_finite", "non-finite EDA sample")

    @property
    def duration_s(self) -> float:
        return self.task_schedule[-1].end_s

    @property
    def frame_shape(self) -> tuple[int, int]:
        return self.frames.shape[1:]

    def label_at(self, t: float) -> Optional[int]:
        """Label of the task covering time ``t``, or None in a gap."""
        for seg in self.task_schedule:
            if seg.start_s <= t < seg.end_s:
                return seg.label
        return None


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricsReport:
    """Confusion counts plus the four derived rates for one stratum.

    Rates whose denominator is zero are reported as 0.0 and named in
    ``degenerate`` instead of raising, so small strata never abort an
    evaluation.
    """

    sensitivity: float
    specificity: float
    accuracy: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    stratum: Optional[str] = None
    degenerate: tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            _require(getattr(self, name) >= 0, "count_nonneg", f"{name} must be >= 0")
        for name in ("sensitivity", "specificity", "accuracy", "f1"):
            v = getattr(self, name)
            _require(0.0 <= v <= 1.0, "rate_range", f"{name}={v} outside [0, 1]")

    def to_dict(self) -> dict:
        d = {
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "accuracy": self.accuracy,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
        }
        if self.stratum is not None:
            d["stratum"] = self.stratum
        if self.degenerate:
            d["degenerate"] = list(self.degenerate)
        return d


def _safe_ratio(num: int, den: int, name: str, degenerate: list[str]) -> float:
    if den == 0:
        degenerate.append(name)
        return 0.0
    return num / den


def compute_metrics(
    predictions: Sequence[int],
    labels: Sequence[int],
    stratum: Optional[str] = None,
) -> MetricsReport:
    """Confusion-matrix metrics for binary stress predictions.

    Positive class is stress (1). F1 is the positive-class F1.
    """
    preds = np.asarray(predictions)
    labs = np.asarray(labels)
    if preds.size == 0:
        raise ValidationError("metrics_nonempty", "empty prediction sequence")
    if preds.shape != labs.shape:
        raise ValidationError(
            "metrics_length",
            f"{preds.shape[0]} predictions vs {labs.shape[0]} labels",
        )
    for arr, what in ((preds, "prediction"), (labs, "label")):
        if not np.isin(arr, (0, 1)).all():
            raise ValidationError("label_binary", f"{what} values must be 0 or 1")

    tp = int(np.sum((preds == 1) & (labs == 1)))
    fp = int(np.sum((preds == 1) & (labs == 0)))
    tn = int(np.sum((preds == 0) & (labs == 0)))
    fn = int(np.sum((preds == 0) & (labs == 1)))

    degenerate: list[str] = []
    sensitivity = _safe_ratio(tp, tp + fn, "sensitivity", degenerate)
    specificity = _safe_ratio(tn, tn + fp, "specificity", degenerate)
    accuracy = _safe_ratio(tp + tn, tp + fp + tn + fn, "accuracy", degenerate)
    f1 = _safe_ratio(2 * tp, 2 * tp + fp + fn, "f1", degenerate)
    return MetricsReport(
        sensitivity=sensitivity,
        specificity=specificity,
        accuracy=accuracy,
        f1=f1,
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        stratum=stratum,
        degenerate=tuple(degenerate),
    )


# ---------------------------------------------------------------------------
# Session serialization
# ---------------------------------------------------------------------------


def _write_stack(path: Path, stack: np.ndarray, dtype: str) -> None:
    n, h, w = stack.shape
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, h, w, n))
        fh.write(np.ascontiguousarray(stack, dtype=dtype).tobytes())


def _read_stack(path: Path, dtype: str, what: str) -> np.ndarray:
    if not path.exists():
        raise ValidationError("file_missing", f"missing {what} file {path}")
    raw = path.read_bytes()
    if len(raw) < HEADER.size:
        raise ValidationError("header_truncated", f"{what} file shorter than the header")
    magic, h, w, n = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValidationError("bad_magic", f"{what} header magic {magic!r} != {MAGIC!r}")
    body = raw[HEADER.size:]
    itemsize = np.dtype(dtype).itemsize
    expected = n * h * w * itemsize
    if len(body) != expected:
        have = len(body) // (h * w * itemsize)
        raise ValidationError(
            "length_mismatch",
            f"{what} header declares {n} frames but file holds {have}",
        )
    return np.frombuffer(body, dtype=dtype).reshape(n, h, w).copy()


def _float_str(x: float) -> str:
    # repr round-trips float64 exactly and is locale-independent ('.')
    return repr(float(x))


def session_manifest(session: SessionRecord) -> dict:
    return {
        "format": "coteach-session-v1",
        "participant_id": session.participant_id,
        "distance_feet": session.distance_feet,
        "thermal_fps": session.thermal_fps,
        "eda_rate_hz": session.eda_rate_hz,
        "seed": session.seed,
        "frame_height": int(session.frames.shape[1]),
        "frame_width": int(session.frames.shape[2]),
        "frame_count": int(session.frames.shape[0]),
        "eda_count": int(session.eda.shape[0]),
        "task_schedule": [
            {"name": s.name, "label": s.label, "start_s": s.start_s, "end_s": s.end_s}
            for s in session.task_schedule
        ],
        "files": {
            "frames": "frames.bin",
            "mask": "mask.bin",
            "parts": "parts.bin",
            "eda": "eda.csv",
        },
    }


def write_session(session: SessionRecord, directory: Path | str) -> Path:
    """Write a session directory; returns the manifest path.

    Byte output is deterministic for equal input, so regenerated sessions
    can be compared by file hash.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    _write_stack(directory / "frames.bin", session.frames, "<f4")
    _write_stack(directory / "mask.bin", session.masks, "<u1")
    _write_stack(directory / "parts.bin", session.parts, "<u1")

    lines = ["time_s,value"]
    for i, v in enumerate(session.eda):
        lines.append(f"{_float_str(i / session.eda_rate_hz)},{_float_str(v)}")
    (directory / "eda.csv").write_text("\n".join(lines) + "\n")

    manifest_path = directory / "manifest.json"
    manifest_path.write_text(
        json.dumps(session_manifest(session), indent=2, sort_keys=True) + "\n"
    )
    return manifest_path


def read_session(directory: Path | str) -> SessionRecord:
    """Load a session directory written by :func:`write_session`."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise ValidationError("file_missing", f"missing manifest {manifest_path}")
    manifest = json.loads(manifest_path.read_text())

    frames = _read_stack(directory / manifest["files"]["frames"], "<f4", "frame")
    masks = _read_stack(directory / manifest["files"]["mask"], "<u1", "mask")
    parts = _read_stack(directory / manifest["files"]["parts"], "<u1", "parts")
    if frames.shape[0] != manifest["frame_count"]:
        raise ValidationError(
            "length_mismatch",
            f"manifest declares {manifest['frame_count']} frames but file holds "
            f"{frames.shape[0]}",
        )

    eda_path = directory / manifest["files"]["eda"]
    if not eda_path.exists():
        raise ValidationError("file_missing", f"missing EDA file {eda_path}")
    eda_lines = eda_path.read_text().strip().splitlines()
    values = [float(line.split(",")[1]) for line in eda_lines[1:]]
    eda = np.asarray(values, dtype=np.float64)
    if eda.shape[0] != manifest["eda_count"]:
        raise ValidationError(
            "length_mismatch",
            f"manifest declares {manifest['eda_count']} EDA samples but file holds "
            f"{eda.shape[0]}",
        )

    schedule = tuple(
        TaskSegment(s["name"], s["label"], s["start_s"], s["end_s"])
        for s in manifest["task_schedule"]
    )
    return SessionRecord(
        participant_id=manifest["participant_id"],
        distance_feet=manifest["distance_feet"],
        task_schedule=schedule,
        frames=frames,
        masks=masks,
        parts=parts,
        eda=eda,
        thermal_fps=manifest["thermal_fps"],
        eda_rate_hz=manifest["eda_rate_hz"],
        seed=manifest["seed"],
    )


def sessions_equal(a: SessionRecord, b: SessionRecord) -> bool:
    """Field-by-field, pixel-exact equality of two sessions."""
    return (
        a.participant_id == b.participant_id
        and a.distance_feet == b.distance_feet
        and a.task_schedule == b.task_schedule
        and a.thermal_fps == b.thermal_fps
        and a.eda_rate_hz == b.eda_rate_hz
        and a.seed == b.seed
        and np.array_equal(a.frames, b.frames)
        and np.array_equal(a.masks, b.masks)
        and np.array_equal(a.parts, b.parts)
        and np.array_equal(a.eda, b.eda)
    )


def file_sha256(path: Path | str) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()
