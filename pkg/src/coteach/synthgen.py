"""Seeded synthetic sessions with physically coupled modalities.

The generator produces sessions in which a skin-conductance-like teacher
signal and a thermal-frame-like stream respond to the same stress
schedule but with different latencies: conductance reacts within 1-3 s
of a stress onset, the thermal stream within 4-5 s. Sweat events also
leave an evaporative-cooling imprint on the face and forearm regions of
the frames, so part of the thermal signal is a delayed, smoothed copy of
the phasic conductance. That coupling is what a cross-modal trainer can
exploit, and its strength is the benchmark's main knob
(``coupling_gain``).

Each frame is composed as emitted field + reflected constant +
atmospheric noise, where the noise grows linearly with camera distance
and the body silhouette shrinks as 1/distance.

Everything is a pure function of (config, profile, seed).
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .datamodel import (
    PART_NAMES,
    SessionRecord,
    TaskSegment,
    ValidationError,
    write_session,
)


class ConfigError(ValueError):
    """A configuration cannot produce a valid session (e.g. body larger
    than the frame)."""


#: (task name, label, duration seconds); two non-stress tasks first, then
#: four stress tasks. Total 750 s.
DEFAULT_SCHEDULE_TEMPLATE = (
    ("calm", 0, 180.0),
    ("counting", 0, 60.0),
    ("stress-video", 1, 180.0),
    ("song-prep", 1, 30.0),
    ("arithmetic", 1, 180.0),
    ("memory", 1, 120.0),
)

STRESS_TRAIN_TASKS = ("stress-video", "arithmetic")
STRESS_EVAL_TASKS = ("song-prep", "memory")


@dataclass(frozen=True)
class SynthConfig:
    """Knobs of the synthetic benchmark."""

    n_participants: int = 24
    distances_feet: tuple[float, ...] = (5.0, 7.0, 9.0)
    distance_jitter_feet: float = 2.0
    frame_height: int = 24
    frame_width: int = 32
    thermal_fps: int = 5
    eda_rate_hz: int = 4
    schedule_template: tuple[tuple[str, int, float], ...] = DEFAULT_SCHEDULE_TEMPLATE
    coupling_gain: float = 0.5  # evaporative-cooling strength, in stress-delta units
    eda_latency_range_s: tuple[float, float] = (1.0, 3.0)
    thermal_latency_range_s: tuple[float, float] = (4.0, 5.0)
    scr_rate_stress: float = 0.1  # Poisson events per second
    scr_rate_nonstress: float = 0.01
    scr_rise_tau_s: float = 0.75
    scr_decay_tau_s: float = 2.0
    tonic_drift: float = 0.3  # amplitude of slow tonic oscillation, conductance units
    stress_delta: float = 0.12  # facial warming under sustained stress, radiometric units
    thermal_response_tau_s: float = 8.0
    evap_tau_s: float = 1.5
    ambient_level: float = 0.30
    reflected_constant: float = 0.05
    noise_sigma_base: float = 0.03
    noise_distance_coeff: float = 0.012
    texture_sigma: float = 0.02  # static per-person spatial pattern on the body
    master_seed: int = 0

    def __post_init__(self):
        if self.n_participants < 0:
            raise ConfigError("n_participants must be >= 0")
        for name in ("thermal_fps", "eda_rate_hz"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("scr_rate_stress", "scr_rate_nonstress"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.coupling_gain < 0:
            raise ConfigError("coupling_gain must be >= 0")
        for name in ("eda_latency_range_s", "thermal_latency_range_s"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ConfigError(f"{name} must be ordered")
        if not self.eda_latency_range_s[1] < self.thermal_latency_range_s[0]:
            raise ConfigError(
                "eda latency upper bound must be below thermal latency lower bound"
            )
        if not self.scr_rise_tau_s < self.scr_decay_tau_s:
            raise ConfigError("SCR rise tau must be below decay tau")
        if not self.distances_feet:
            raise ConfigError("distances_feet must be non-empty")

    @property
    def reference_distance_feet(self) -> float:
        return min(self.distances_feet)


@dataclass(frozen=True)
class PersonProfile:
    """Per-person physiology and geometry, drawn once from the master seed."""

    participant_id: str
    distance_feet: float
    baseline_skin_temp: float
    tonic_eda_level: float
    scr_amplitude_scale: float
    fill_fraction: float  # body height / frame height at the nearest distance
    head_fraction: float  # head height / body height
    torso_width_fraction: float  # torso width / body height
    seed: int


def build_schedule(
    template: Sequence[tuple[str, int, float]],
) -> tuple[TaskSegment, ...]:
    segments = []
    t = 0.0
    for name, label, duration in template:
        segments.append(TaskSegment(name, label, t, t + duration))
        t += duration
    return tuple(segments)


def make_profiles(config: SynthConfig) -> tuple[PersonProfile, ...]:
    """One profile per participant: distances round-robin with jitter,
    physiology drawn from per-person seeded streams."""
    seeds = np.random.SeedSequence(config.master_seed).generate_state(
        max(config.n_participants, 1)
    )
    profiles = []
    for i in range(config.n_participants):
        person_seed = int(seeds[i])
        rng = np.random.default_rng(person_seed)
        base_distance = config.distances_feet[i % len(config.distances_feet)]
        distance = base_distance + rng.uniform(0.0, config.distance_jitter_feet)
        profile = PersonProfile(
            participant_id=f"p{i:03d}",
            distance_feet=float(distance),
            baseline_skin_temp=float(rng.normal(1.0, 0.05)),
            tonic_eda_level=float(rng.uniform(2.0, 8.0)),
            scr_amplitude_scale=float(rng.uniform(0.6, 1.4)),
            fill_fraction=float(rng.uniform(0.80, 0.92)),
            head_fraction=float(rng.uniform(0.24, 0.30)),
            torso_width_fraction=float(rng.uniform(0.38, 0.46)),
            seed=person_seed,
        )
        render_body(profile, config, config.reference_distance_feet)  # must fit
        profiles.append(profile)
    return tuple(profiles)


# ---------------------------------------------------------------------------
# EDA generation
# ---------------------------------------------------------------------------


def scr_pulse(t: np.ndarray, rise_tau: float, decay_tau: float) -> np.ndarray:
    """Two-exponential conductance pulse, normalized to unit peak."""
    t_peak = np.log(decay_tau / rise_tau) * rise_tau * decay_tau / (decay_tau - rise_tau)
    peak = np.exp(-t_peak / decay_tau) - np.exp(-t_peak / rise_tau)
    out = np.exp(-t / decay_tau) - np.exp(-t / rise_tau)
    return out / peak


def generate_eda(
    schedule: Sequence[TaskSegment],
    profile: PersonProfile,
    config: SynthConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Raw conductance trace: tonic level + slow drift + SCR events.

    Every stress segment triggers one onset response after a 1-3 s
    latency; on top of that, events arrive as a Poisson process whose
    rate depends on the segment label.
    """
    duration = schedule[-1].end_s
    n = round(duration * config.eda_rate_hz)
    t = np.arange(n, dtype=np.float64) / config.eda_rate_hz

    periods = rng.uniform((200.0, 60.0), (400.0, 120.0))
    phases = rng.uniform(0.0, 1.0, size=2)
    drift = config.tonic_drift * (
        np.sin(2 * np.pi * (t / periods[0] + phases[0]))
        + 0.5 * np.sin(2 * np.pi * (t / periods[1] + phases[1]))
    )
    signal = profile.tonic_eda_level + drift

    events: list[tuple[float, float]] = []
    for seg in schedule:
        if seg.label == 1:
            onset = seg.start_s + rng.uniform(*config.eda_latency_range_s)
            events.append((onset, profile.scr_amplitude_scale * rng.uniform(0.6, 1.0)))
            rate = config.scr_rate_stress
        else:
            rate = config.scr_rate_nonstress
        count = rng.poisson(rate * seg.duration_s)
        for _ in range(count):
            start = seg.start_s + rng.uniform(*config.eda_latency_range_s)
            t0 = rng.uniform(start, seg.end_s) if start < seg.end_s else start
            events.append((t0, profile.scr_amplitude_scale * rng.uniform(0.4, 1.0)))

    for t0, amplitude in events:
        i0 = int(np.searchsorted(t, t0))
        if i0 >= n:
            continue
        tail = t[i0:] - t0
        signal[i0:] += amplitude * scr_pulse(
            tail, config.scr_rise_tau_s, config.scr_decay_tau_s
        )
    return signal


def phasic_component(eda: np.ndarray, rate_hz: float, baseline_s: float = 20.0) -> np.ndarray:
    """Event-driven part of the trace: raw minus a boxcar tonic baseline."""
    window = max(1, round(baseline_s * rate_hz))
    if window % 2 == 0:
        window += 1
    half = window // 2
    padded = np.concatenate(
        [np.full(half, eda[0]), eda, np.full(half, eda[-1])]
    )
    kernel = np.full(window, 1.0 / window)
    baseline = np.convolve(padded, kernel, mode="valid")
    return eda - baseline


# ---------------------------------------------------------------------------
# Body geometry
# ---------------------------------------------------------------------------


def render_body(
    profile: PersonProfile, config: SynthConfig, distance_feet: float
) -> tuple[np.ndarray, np.ndarray]:
    """Rasterize the silhouette at a camera distance.

    Returns (mask, part_map), both (H, W) uint8. The silhouette is a
    head ellipse over a torso rectangle with two arm rectangles per side
    (upper arm above forearm), which is enough to label the eight body
    regions. Pixel height scales as 1/distance.
    """
    h, w = config.frame_height, config.frame_width
    scale = config.reference_distance_feet / distance_feet
    body_h = int(round(h * profile.fill_fraction * scale))
    if body_h > h:
        raise ConfigError(
            f"body height {body_h}px exceeds frame height {h}px at {distance_feet} ft"
        )
    if body_h < 8:
        raise ConfigError(
            f"body height {body_h}px too small to carve 8 regions at {distance_feet} ft"
        )

    head_h = max(2, round(profile.head_fraction * body_h))
    torso_h = body_h - head_h
    torso_w = max(4, round(profile.torso_width_fraction * body_h))
    arm_w = max(1, round(torso_w / 4))
    head_w = max(2, round(0.75 * head_h / 2) * 2)

    if torso_w + 2 * arm_w > w:
        raise ConfigError(
            f"body width {torso_w + 2 * arm_w}px exceeds frame width {w}px"
        )

    top = (h - body_h) // 2
    cx = w // 2
    parts = np.zeros((h, w), dtype=np.uint8)

    # head ellipse, split into left/right face at the center column
    rr, cc = np.ogrid[:h, :w]
    cy_head = top + head_h / 2.0 - 0.5
    ellipse = ((rr - cy_head) / (head_h / 2.0)) ** 2 + (
        (cc - (cx - 0.5)) / (head_w / 2.0)
    ) ** 2 <= 1.0
    parts[ellipse & (cc < cx)] = 1
    parts[ellipse & (cc >= cx)] = 2

    # torso rectangle split left/right
    t0, t1 = top + head_h, top + head_h + torso_h
    c0, c1 = cx - torso_w // 2, cx + (torso_w - torso_w // 2)
    parts[t0:t1, c0:cx] = 3
    parts[t0:t1, cx:c1] = 4

    # arms: upper half / lower half of the torso extent, hugging the torso
    mid = t0 + torso_h // 2
    parts[t0:mid, c0 - arm_w : c0] = 5
    parts[t0:mid, c1 : c1 + arm_w] = 6
    parts[mid:t1, c0 - arm_w : c0] = 7
    parts[mid:t1, c1 : c1 + arm_w] = 8

    mask = (parts > 0).astype(np.uint8)
    for part_id in range(1, 9):
        if not (parts == part_id).any():
            raise ConfigError(
                f"region '{PART_NAMES[part_id - 1]}' empty at {distance_feet} ft"
            )
    if not _connected(mask):
        raise ConfigError("body silhouette is not 4-connected")
    return mask, parts


def _connected(mask: np.ndarray) -> bool:
    coords = np.argwhere(mask == 1)
    if len(coords) == 0:
        return False
    seen = np.zeros_like(mask, dtype=bool)
    queue = deque([tuple(coords[0])])
    seen[tuple(coords[0])] = True
    count = 0
    h, w = mask.shape
    while queue:
        r, c = queue.popleft()
        count += 1
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and mask[nr, nc] and not seen[nr, nc]:
                seen[nr, nc] = True
                queue.append((nr, nc))
    return count == len(coords)


# ---------------------------------------------------------------------------
# Thermal generation
# ---------------------------------------------------------------------------


def _first_order(drive: np.ndarray, tau_s: float, dt: float) -> np.ndarray:
    """Exponential-approach response of a first-order system to ``drive``."""
    out = np.empty_like(drive)
    gain = dt / tau_s
    state = 0.0
    for i, d in enumerate(drive):
        state += (d - state) * gain
        out[i] = state
    return out


def stress_indicator(
    schedule: Sequence[TaskSegment], times: np.ndarray
) -> np.ndarray:
    s = np.zeros_like(times)
    for seg in schedule:
        if seg.label == 1:
            s[(times >= seg.start_s) & (times < seg.end_s)] = 1.0
    return s


def generate_thermal(
    schedule: Sequence[TaskSegment],
    profile: PersonProfile,
    eda_sequence: np.ndarray,
    config: SynthConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Frame stream coupled to the schedule and to the conductance trace.

    emitted = baseline body map
              + stress_delta * (delayed, low-passed stress indicator) on the face
              - coupling_gain * stress_delta * (delayed, smoothed phasic
                conductance) on face and forearms
    frame   = emitted + reflected constant + distance-scaled Gaussian noise

    Returns (frames, masks, parts) stacks of shape (N, H, W).
    """
    duration = schedule[-1].end_s
    n = round(duration * config.thermal_fps)
    dt = 1.0 / config.thermal_fps
    t = np.arange(n, dtype=np.float64) * dt

    mask, parts = render_body(profile, config, profile.distance_feet)

    thermal_latency = rng.uniform(*config.thermal_latency_range_s)
    indicator = stress_indicator(schedule, t - thermal_latency)
    response = _first_order(indicator, config.thermal_response_tau_s, dt)

    # phasic conductance, expressed in units of one typical event peak,
    # delayed so the total stimulus-to-thermal lag lands in the thermal
    # latency range, then smoothed by the skin's thermal inertia
    typical_peak = 0.8 * profile.scr_amplitude_scale
    phasic = phasic_component(eda_sequence, config.eda_rate_hz) / typical_peak
    t_eda = np.arange(eda_sequence.shape[0], dtype=np.float64) / config.eda_rate_hz
    evap_delay = thermal_latency - float(np.mean(config.eda_latency_range_s))
    delayed = np.interp(t - evap_delay, t_eda, phasic, left=0.0, right=float(phasic[-1]))
    evap = _first_order(delayed, config.evap_tau_s, dt)

    face = np.isin(parts, (1, 2)).astype(np.float64)
    evap_region = np.isin(parts, (1, 2, 7, 8)).astype(np.float64)

    offsets = np.zeros_like(face)
    offsets[np.isin(parts, (1, 2))] = 0.06
    offsets[np.isin(parts, (5, 6, 7, 8))] = -0.03
    texture = rng.normal(0.0, 1.0, size=mask.shape)
    texture = _box_blur(texture) * config.texture_sigma

    body = mask.astype(np.float64)
    base_map = (
        body * (profile.baseline_skin_temp + offsets + texture)
        + (1.0 - body) * config.ambient_level
        + config.reflected_constant
    )

    sigma = config.noise_sigma_base + config.noise_distance_coeff * profile.distance_feet
    noise = rng.normal(0.0, sigma, size=(n,) + mask.shape)

    frames = (
        base_map[None, :, :]
        + config.stress_delta * response[:, None, None] * face[None, :, :]
        - config.coupling_gain
        * config.stress_delta
        * evap[:, None, None]
        * evap_region[None, :, :]
        + noise
    ).astype(np.float32)

    masks = np.repeat(mask[None, :, :], n, axis=0)
    part_stack = np.repeat(parts[None, :, :], n, axis=0)
    return frames, masks, part_stack


def _box_blur(a: np.ndarray) -> np.ndarray:
    padded = np.pad(a, 1, mode="edge")
    out = np.zeros_like(a)
    for dr in (0, 1, 2):
        for dc in (0, 1, 2):
            out += padded[dr : dr + a.shape[0], dc : dc + a.shape[1]]
    return out / 9.0


# ---------------------------------------------------------------------------
# Sessions and datasets
# ---------------------------------------------------------------------------


def generate_session(
    profile: PersonProfile, config: SynthConfig, rng: np.random.Generator
) -> SessionRecord:
    """Assemble one full session for a participant."""
    schedule = build_schedule(config.schedule_template)
    eda = generate_eda(schedule, profile, config, rng)
    frames, masks, parts = generate_thermal(schedule, profile, eda, config, rng)
    return SessionRecord(
        participant_id=profile.participant_id,
        distance_feet=profile.distance_feet,
        task_schedule=schedule,
        frames=frames,
        masks=masks,
        parts=parts,
        eda=eda,
        thermal_fps=config.thermal_fps,
        eda_rate_hz=config.eda_rate_hz,
        seed=profile.seed,
    )


def generate_sessions(config: SynthConfig) -> list[SessionRecord]:
    """All benchmark sessions, in participant order, without touching disk."""
    sessions = []
    for profile in make_profiles(config):
        rng = np.random.default_rng(profile.seed)
        sessions.append(generate_session(profile, config, rng))
    return sessions


def dataset_manifest_path(directory: Path | str) -> Path:
    return Path(directory) / "dataset.json"


def generate_benchmark(config: SynthConfig, directory: Path | str) -> Path:
    """Write the full benchmark dataset; returns the dataset manifest path.

    One session directory per participant under ``sessions/``; the
    top-level manifest lists sessions, distances, and the master seed.
    Regeneration with the same config is byte-identical.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for profile in make_profiles(config):
        rng = np.random.default_rng(profile.seed)
        session = generate_session(profile, config, rng)
        rel = Path("sessions") / profile.participant_id
        write_session(session, directory / rel)
        entries.append(
            {
                "session_id": profile.participant_id,
                "participant_id": profile.participant_id,
                "distance_feet": profile.distance_feet,
                "seed": profile.seed,
                "path": rel.as_posix(),
            }
        )
    manifest = {
        "format": "coteach-dataset-v1",
        "master_seed": config.master_seed,
        "n_participants": config.n_participants,
        "config": asdict(config),
        "sessions": entries,
    }
    path = dataset_manifest_path(directory)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_benchmark(directory: Path | str) -> list[SessionRecord]:
    """Read every session listed in a dataset manifest."""
    from .datamodel import read_session

    directory = Path(directory)
    manifest = json.loads(dataset_manifest_path(directory).read_text())
    return [read_session(directory / e["path"]) for e in manifest["sessions"]]
