"""Session-to-window preprocessing.

Pipeline per session: per-participant z-scoring of the conductance
trace, sliding-window extraction (5 s windows, 2 s overlap by default),
body masking, window-wise z-scoring of body pixels, and the optional
partial-body masking augmentation. Also hosts class balancing and the
person-disjoint fold splitter used by every evaluation protocol.

All operations are pure and deterministic given their rng arguments.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .datamodel import (
    DetectionWindow,
    EdaFeatureVector,
    EdaSeries,
    SessionRecord,
    ThermalFrame,
    ThermalWindow,
    ValidationError,
)


@dataclass(frozen=True)
class WindowingSpec:
    """Sliding-window geometry in seconds."""

    window_seconds: float = 5.0
    overlap_seconds: float = 2.0

    def __post_init__(self):
        if not 0 <= self.overlap_seconds < self.window_seconds:
            raise ValidationError(
                "window_overlap", "overlap must satisfy 0 <= overlap < window"
            )

    @property
    def stride_seconds(self) -> float:
        return self.window_seconds - self.overlap_seconds


@dataclass(frozen=True)
class MaskAugmentSpec:
    """Distribution over how many body parts to blank during training."""

    probabilities: tuple[float, float, float, float] = (0.30, 0.23, 0.23, 0.24)
    part_ids: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8)

    def __post_init__(self):
        if abs(sum(self.probabilities) - 1.0) > 1e-9:
            raise ValidationError("augment_probs", "probabilities must sum to 1")
        if any(p < 0 for p in self.probabilities):
            raise ValidationError("augment_probs", "probabilities must be >= 0")


# ---------------------------------------------------------------------------
# Windowing
# ---------------------------------------------------------------------------


def window_start_times(duration_s: float, spec: WindowingSpec) -> list[float]:
    """Start times 0, stride, 2*stride, ... while start + window <= duration."""
    starts = []
    k = 0
    while True:
        start = k * spec.stride_seconds
        if start + spec.window_seconds > duration_s + 1e-9:
            break
        starts.append(start)
        k += 1
    return starts


def _window_label_and_task(
    session: SessionRecord, start: float, end: float
) -> tuple[int, str]:
    stress_overlap = 0.0
    nonstress_overlap = 0.0
    best_task = ""
    best_overlap = 0.0
    for seg in session.task_schedule:
        overlap = max(0.0, min(seg.end_s, end) - max(seg.start_s, start))
        if overlap <= 0:
            continue
        if seg.label == 1:
            stress_overlap += overlap
        else:
            nonstress_overlap += overlap
        if overlap > best_overlap:
            best_overlap = overlap
            best_task = seg.name
    # ties break toward non-stress
    label = 1 if stress_overlap > nonstress_overlap else 0
    return label, best_task


def extract_windows(
    session: SessionRecord, spec: WindowingSpec = WindowingSpec()
) -> list[DetectionWindow]:
    """Slice a session into labeled, modality-synchronized windows.

    A session shorter than one window yields an empty list. The window
    label is the majority-overlap task label over the window interval.
    """
    fps = session.thermal_fps
    rate = session.eda_rate_hz
    frames_per_window = round(spec.window_seconds * fps)
    eda_per_window = round(spec.window_seconds * rate)

    windows = []
    for start in window_start_times(session.duration_s, spec):
        f0 = round(start * fps)
        e0 = round(start * rate)
        label, task = _window_label_and_task(session, start, start + spec.window_seconds)
        thermal = ThermalWindow(
            pixels=session.frames[f0 : f0 + frames_per_window],
            mask=session.masks[f0 : f0 + frames_per_window],
            start_time=start,
        )
        eda = EdaSeries(
            samples=session.eda[e0 : e0 + eda_per_window].copy(), rate_hz=rate
        )
        windows.append(
            DetectionWindow(
                thermal=thermal,
                eda=eda,
                label=label,
                session_id=session.participant_id,
                participant_id=session.participant_id,
                distance_feet=session.distance_feet,
                part_map=session.parts[f0].copy(),
                task_name=task,
            )
        )
    return windows


# ---------------------------------------------------------------------------
# Normalization and masking
# ---------------------------------------------------------------------------


def znorm_eda(session: SessionRecord) -> SessionRecord:
    """Z-score the conductance trace over the whole session (population std)."""
    std = float(session.eda.std())
    if std == 0.0:
        raise ValidationError(
            "zero_variance",
            f"constant EDA signal in session {session.participant_id}",
        )
    normalized = (session.eda - session.eda.mean()) / std
    return replace(session, eda=normalized)


def apply_body_mask(frame: ThermalFrame) -> ThermalFrame:
    """Zero every pixel outside the body mask."""
    return ThermalFrame(
        pixels=(frame.pixels * frame.mask).astype(np.float32), mask=frame.mask
    )


def mask_window(window: ThermalWindow) -> ThermalWindow:
    return ThermalWindow(
        pixels=(window.pixels * window.mask).astype(np.float32),
        mask=window.mask,
        start_time=window.start_time,
    )


def znorm_thermal(window: ThermalWindow) -> ThermalWindow:
    """Window-wise z-score over body pixels of all frames jointly.

    Background stays exactly 0, so statistics never depend on how much
    of the frame the body covers.
    """
    body = window.mask == 1
    values = window.pixels[body].astype(np.float64)
    if values.size == 0:
        raise ValidationError("zero_variance", "window has no body pixels")
    std = float(values.std())
    if std == 0.0:
        raise ValidationError("zero_variance", "zero variance over body pixels")
    normalized = (window.pixels.astype(np.float64) - values.mean()) / std
    normalized = (normalized * window.mask).astype(np.float32)
    return ThermalWindow(pixels=normalized, mask=window.mask, start_time=window.start_time)


def prepare_window(window: DetectionWindow) -> DetectionWindow:
    """Model-ready thermal: body-masked then window z-scored."""
    return replace(window, thermal=znorm_thermal(mask_window(window.thermal)))


def eda_features(series: EdaSeries) -> EdaFeatureVector:
    """The six summary statistics fed to the conductance encoder.

    Variability is the mean absolute successive difference; std is the
    population standard deviation.
    """
    x = series.samples
    if x.size == 0:
        raise ValidationError("eda_nonempty", "empty EDA series")
    variability = float(np.abs(np.diff(x)).mean()) if x.size > 1 else 0.0
    return EdaFeatureVector(
        mean=float(x.mean()),
        min=float(x.min()),
        max=float(x.max()),
        median=float(np.median(x)),
        variability=variability,
        std=float(x.std()),
    )


def augment_partial_mask(
    window: DetectionWindow, spec: MaskAugmentSpec, rng: np.random.Generator
) -> DetectionWindow:
    """Blank 0-3 randomly chosen body parts in every frame of the window.

    Blanked parts are removed from the pixels, the mask, and the part
    map, mimicking occlusion of that body section.
    """
    count = int(rng.choice(len(spec.probabilities), p=spec.probabilities))
    if count == 0:
        return window
    chosen = rng.choice(len(spec.part_ids), size=count, replace=False)
    part_ids = [spec.part_ids[i] for i in chosen]
    drop = np.isin(window.part_map, part_ids)
    keep = (~drop).astype(np.uint8)
    thermal = ThermalWindow(
        pixels=(window.thermal.pixels * keep[None, :, :]).astype(np.float32),
        mask=window.thermal.mask * keep[None, :, :],
        start_time=window.thermal.start_time,
    )
    part_map = window.part_map * keep
    return replace(window, thermal=thermal, part_map=part_map)


# ---------------------------------------------------------------------------
# Balancing and splits
# ---------------------------------------------------------------------------


def balance_undersample(
    windows: Sequence[DetectionWindow], rng: np.random.Generator
) -> list[DetectionWindow]:
    """Drop uniformly sampled majority-class windows until classes match."""
    labels = np.array([w.label for w in windows])
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValidationError(
            "class_absent", f"cannot balance with {n_pos} stress / {n_neg} non-stress"
        )
    if n_pos == n_neg:
        return list(windows)
    majority = 1 if n_pos > n_neg else 0
    excess = abs(n_pos - n_neg)
    majority_idx = np.flatnonzero(labels == majority)
    drop = set(rng.choice(majority_idx, size=excess, replace=False).tolist())
    return [w for i, w in enumerate(windows) if i not in drop]


@dataclass(frozen=True)
class FoldSplit:
    train_sessions: tuple[str, ...]
    val_sessions: tuple[str, ...]


@dataclass(frozen=True)
class SplitPlan:
    """Person-disjoint fold assignment over sessions."""

    folds: tuple[FoldSplit, ...]
    session_participants: tuple[tuple[str, str], ...]  # (session_id, participant_id)

    def participants_of(self, session_ids: Iterable[str]) -> set[str]:
        lookup = dict(self.session_participants)
        return {lookup[s] for s in session_ids}

    def to_dict(self) -> dict:
        return {
            "folds": [
                {"train": list(f.train_sessions), "val": list(f.val_sessions)}
                for f in self.folds
            ],
            "sessions": [list(sp) for sp in self.session_participants],
        }

    def plan_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()


def person_disjoint_folds(
    sessions: Sequence[SessionRecord],
    k: int,
    val_sessions_per_fold: int = 5,
    rng: Optional[np.random.Generator] = None,
) -> SplitPlan:
    """k folds whose validation participants never appear in training.

    Validation sets are pairwise session-disjoint across folds; every
    other session goes to that fold's training set.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if k < 1:
        raise ValidationError("fold_count", "k must be >= 1")
    if k * val_sessions_per_fold > len(sessions):
        raise ValidationError(
            "fold_capacity",
            f"{k} folds x {val_sessions_per_fold} validation sessions exceed "
            f"{len(sessions)} sessions",
        )

    by_participant: dict[str, list[str]] = {}
    pairs = []
    for s in sessions:
        sid = s.participant_id
        by_participant.setdefault(s.participant_id, []).append(sid)
        pairs.append((sid, s.participant_id))

    participants = sorted(by_participant)
    order = rng.permutation(len(participants))
    shuffled = [participants[i] for i in order]

    all_ids = tuple(sorted(sid for sid, _ in pairs))
    folds = []
    cursor = 0
    for _ in range(k):
        val: list[str] = []
        while len(val) < val_sessions_per_fold:
            if cursor >= len(shuffled):
                raise ValidationError(
                    "fold_capacity", "not enough participants to fill validation sets"
                )
            val.extend(by_participant[shuffled[cursor]])
            cursor += 1
        if len(val) != val_sessions_per_fold:
            raise ValidationError(
                "fold_capacity",
                "participant session counts do not tile the validation size",
            )
        val_t = tuple(sorted(val))
        train_t = tuple(s for s in all_ids if s not in val_t)
        folds.append(FoldSplit(train_sessions=train_t, val_sessions=val_t))

    plan = SplitPlan(folds=tuple(folds), session_participants=tuple(sorted(pairs)))
    for fold in plan.folds:
        overlap = plan.participants_of(fold.train_sessions) & plan.participants_of(
            fold.val_sessions
        )
        if overlap:
            raise ValidationError(
                "person_disjoint", f"participants {sorted(overlap)} leak across split"
            )
    return plan


# ---------------------------------------------------------------------------
# Windowed dataset cache
# ---------------------------------------------------------------------------


def write_window_cache(
    directory: Path | str,
    plan: SplitPlan,
    sessions: Sequence[SessionRecord],
    spec: WindowingSpec,
) -> list[Path]:
    """One file per fold listing window references + labels, for exact re-runs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    refs: dict[str, list[dict]] = {}
    for session in sessions:
        refs[session.participant_id] = [
            {
                "session": w.session_id,
                "start_s": w.thermal.start_time,
                "label": w.label,
                "task": w.task_name,
            }
            for w in extract_windows(session, spec)
        ]
    paths = []
    for i, fold in enumerate(plan.folds):
        payload = {
            "fold": i,
            "window_seconds": spec.window_seconds,
            "overlap_seconds": spec.overlap_seconds,
            "train": [r for sid in fold.train_sessions for r in refs[sid]],
            "val": [r for sid in fold.val_sessions for r in refs[sid]],
        }
        path = directory / f"fold_{i}.json"
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        paths.append(path)
    return paths
