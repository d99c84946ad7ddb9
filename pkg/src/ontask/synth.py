"""Seeded synthetic session generator for desk-scale verification.

A three-state semi-Markov simulator (on-task, off-task-on-platform,
off-platform) emits frames, URL logs and labels in exactly the formats the
ingest module parses, plus a hidden-state track for oracle tests. Off-platform
time always carries an Off-Task label, and the URL log is off-platform exactly
during that state, so the context gate's behavior is exactly checkable.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO

import numpy as np

from ontask import pipeline
from ontask.errors import ParseError, ValidationError
from ontask.ingest import (
    ChannelGroup,
    ChannelSchema,
    FrameRecord,
    Label,
    LabelInterval,
    PlatformPatternSet,
    SessionMetadata,
    SessionTimeline,
    UrlEvent,
    build_timeline,
    write_frames,
    write_labels,
    write_platform_patterns,
    write_url_log,
)

MANIFEST_FORMAT_VERSION = 1

PLATFORM_DOMAIN = "learnhub.example"

_DISTRACTOR_URLS = (
    "https://clipstream.example/watch?v={k}",
    "https://chatter.example/feed",
    "https://arcade.example/play/{k}",
)


class HiddenState(enum.Enum):
    ON_TASK = "on_task"
    OFF_TASK_ON_PLATFORM = "off_task_on_platform"
    OFF_PLATFORM = "off_platform"


STATES = (
    HiddenState.ON_TASK,
    HiddenState.OFF_TASK_ON_PLATFORM,
    HiddenState.OFF_PLATFORM,
)

_MIN_DWELL_S = 2.0

_BASE_BY_GROUP = {
    ChannelGroup.FACE_LOCATION: 0.5,
    ChannelGroup.HEAD_POSE: 0.0,
    ChannelGroup.LANDMARK: 0.0,
    ChannelGroup.EXPRESSION: 0.3,
    ChannelGroup.EMOTION: 0.2,
    ChannelGroup.OTHER: 0.0,
}


@dataclass(frozen=True)
class StateEmission:
    """Per-state channel emission parameters.

    group_offsets are mean shifts away from the on-task baseline; they get
    multiplied by the corpus-level appearance_separability.
    """

    group_offsets: dict[ChannelGroup, float]
    osc_freq_hz: float
    osc_amp: float
    noise_sd: float
    face_drop_prob: float

    def __post_init__(self) -> None:
        if self.noise_sd < 0 or self.osc_amp < 0 or self.osc_freq_hz < 0:
            raise ValidationError("emission parameters must be non-negative")
        if not 0.0 <= self.face_drop_prob <= 1.0:
            raise ValidationError("face_drop_prob must be in [0, 1]")

    def offset(self, group: ChannelGroup) -> float:
        return self.group_offsets.get(group, 0.0)


@dataclass(frozen=True)
class SynthConfig:
    cells: tuple[tuple[str, str], ...] = (("c1", "math"), ("c2", "math"), ("c1", "esl"))
    n_sessions_per_cell: int = 2
    session_duration_ms: int = 2_400_000
    schema: ChannelSchema = field(default_factory=lambda: default_synth_schema())
    dwell_mean_s: dict[HiddenState, float] = field(
        default_factory=lambda: {
            HiddenState.ON_TASK: 48.0,
            HiddenState.OFF_TASK_ON_PLATFORM: 16.0,
            HiddenState.OFF_PLATFORM: 20.0,
        }
    )
    transitions: tuple[tuple[float, float, float], ...] = (
        (0.0, 0.65, 0.35),
        (0.75, 0.0, 0.25),
        (0.8, 0.2, 0.0),
    )
    emissions: dict[HiddenState, StateEmission] = field(
        default_factory=lambda: default_emissions()
    )
    appearance_separability: float = 1.0
    classroom_shift: float = 0.25
    platform_shift: float = 0.25
    seed: int = 42

    def __post_init__(self) -> None:
        if not self.cells:
            raise ValidationError("at least one (classroom, platform) cell is required")
        if self.n_sessions_per_cell < 0:
            raise ValidationError("n_sessions_per_cell must be >= 0")
        if self.session_duration_ms <= 0:
            raise ValidationError("session_duration_ms must be > 0")
        for state in STATES:
            if state not in self.dwell_mean_s or not self.dwell_mean_s[state] > 0:
                raise ValidationError(f"dwell mean for {state.value} must be > 0")
            if state not in self.emissions:
                raise ValidationError(f"missing emission parameters for {state.value}")
        if len(self.transitions) != 3 or any(len(r) != 3 for r in self.transitions):
            raise ValidationError("transitions must be a 3x3 matrix")
        for i, row in enumerate(self.transitions):
            if row[i] != 0.0:
                raise ValidationError("transition matrix diagonal must be zero")
            if any(p < 0 for p in row) or abs(sum(row) - 1.0) > 1e-9:
                raise ValidationError("transition rows must be probabilities summing to 1")
        if self.appearance_separability < 0:
            raise ValidationError("appearance_separability must be >= 0")


def default_synth_schema(sample_rate_hz: float = 15.0) -> ChannelSchema:
    """Compact 16-channel schema covering every channel group; keeps the
    default corpus desk-scale while the full 112-channel schema stays
    available for real corpora."""
    entries: list[tuple[str, ChannelGroup]] = [
        ("face_x", ChannelGroup.FACE_LOCATION),
        ("face_y", ChannelGroup.FACE_LOCATION),
        ("pose_pitch", ChannelGroup.HEAD_POSE),
        ("pose_yaw", ChannelGroup.HEAD_POSE),
        ("pose_roll", ChannelGroup.HEAD_POSE),
    ]
    entries += [(f"lm_{i:02d}", ChannelGroup.LANDMARK) for i in range(6)]
    entries += [
        ("expr_smile", ChannelGroup.EXPRESSION),
        ("expr_brow_raise", ChannelGroup.EXPRESSION),
        ("expr_mouth_open", ChannelGroup.EXPRESSION),
    ]
    entries += [
        ("emo_joy", ChannelGroup.EMOTION),
        ("emo_neutral", ChannelGroup.EMOTION),
    ]
    return ChannelSchema(entries=tuple(entries), sample_rate_hz=sample_rate_hz)


def default_emissions() -> dict[HiddenState, StateEmission]:
    """Off-task-on-platform looks clearly different from on-task; off-platform
    looks almost like on-task (the student is absorbed, just elsewhere), so
    only the URL context can reliably expose it."""
    return {
        HiddenState.ON_TASK: StateEmission(
            group_offsets={},
            osc_freq_hz=0.3,
            osc_amp=0.3,
            noise_sd=1.0,
            face_drop_prob=0.02,
        ),
        HiddenState.OFF_TASK_ON_PLATFORM: StateEmission(
            group_offsets={
                ChannelGroup.FACE_LOCATION: 0.5,
                ChannelGroup.HEAD_POSE: 0.9,
                ChannelGroup.LANDMARK: 0.3,
                ChannelGroup.EXPRESSION: -0.5,
                ChannelGroup.EMOTION: 0.6,
            },
            osc_freq_hz=1.4,
            osc_amp=0.5,
            noise_sd=1.0,
            face_drop_prob=0.12,
        ),
        HiddenState.OFF_PLATFORM: StateEmission(
            group_offsets={
                ChannelGroup.FACE_LOCATION: 0.05,
                ChannelGroup.HEAD_POSE: 0.05,
            },
            osc_freq_hz=0.35,
            osc_amp=0.3,
            noise_sd=1.1,
            face_drop_prob=0.3,
        ),
    }


def default_config() -> SynthConfig:
    """The corpus the acceptance suite runs on: a 3-cell layout (classroom 1
    and 2 on math, classroom 1 on ESL), two 40-minute sessions per cell."""
    return SynthConfig()


def config_to_json_obj(cfg: SynthConfig) -> dict:
    return {
        "cells": [list(cell) for cell in cfg.cells],
        "n_sessions_per_cell": cfg.n_sessions_per_cell,
        "session_duration_ms": cfg.session_duration_ms,
        "schema": cfg.schema.to_json_obj(),
        "dwell_mean_s": {s.value: cfg.dwell_mean_s[s] for s in STATES},
        "transitions": [list(row) for row in cfg.transitions],
        "emissions": {
            s.value: {
                "group_offsets": {
                    g.value: v for g, v in cfg.emissions[s].group_offsets.items()
                },
                "osc_freq_hz": cfg.emissions[s].osc_freq_hz,
                "osc_amp": cfg.emissions[s].osc_amp,
                "noise_sd": cfg.emissions[s].noise_sd,
                "face_drop_prob": cfg.emissions[s].face_drop_prob,
            }
            for s in STATES
        },
        "appearance_separability": cfg.appearance_separability,
        "classroom_shift": cfg.classroom_shift,
        "platform_shift": cfg.platform_shift,
        "seed": cfg.seed,
    }


def config_from_json_obj(obj: dict) -> SynthConfig:
    from ontask.ingest import ChannelGroup as _Group

    emissions = {
        HiddenState(name): StateEmission(
            group_offsets={_Group(g): float(v) for g, v in e["group_offsets"].items()},
            osc_freq_hz=float(e["osc_freq_hz"]),
            osc_amp=float(e["osc_amp"]),
            noise_sd=float(e["noise_sd"]),
            face_drop_prob=float(e["face_drop_prob"]),
        )
        for name, e in obj["emissions"].items()
    }
    return SynthConfig(
        cells=tuple((str(c), str(p)) for c, p in obj["cells"]),
        n_sessions_per_cell=int(obj["n_sessions_per_cell"]),
        session_duration_ms=int(obj["session_duration_ms"]),
        schema=ChannelSchema.from_json_obj(obj["schema"]),
        dwell_mean_s={HiddenState(k): float(v) for k, v in obj["dwell_mean_s"].items()},
        transitions=tuple(tuple(float(p) for p in row) for row in obj["transitions"]),
        emissions=emissions,
        appearance_separability=float(obj["appearance_separability"]),
        classroom_shift=float(obj["classroom_shift"]),
        platform_shift=float(obj["platform_shift"]),
        seed=int(obj["seed"]),
    )


@dataclass(frozen=True)
class GeneratedSession:
    timeline: SessionTimeline
    true_states: tuple[tuple[int, int, HiddenState], ...]


@dataclass(frozen=True)
class SynthCorpus:
    sessions: tuple[GeneratedSession, ...]
    cells: tuple[tuple[str, str], ...]
    patterns: PlatformPatternSet
    schema: ChannelSchema
    config: SynthConfig

    def as_corpus(self) -> pipeline.Corpus:
        return pipeline.Corpus(
            sessions=tuple(s.timeline for s in self.sessions),
            patterns=self.patterns,
            schema=self.schema,
        )


def platform_host(platform_id: str) -> str:
    return f"{platform_id}.{PLATFORM_DOMAIN}"


def default_patterns() -> PlatformPatternSet:
    return PlatformPatternSet(patterns=(("host_suffix", PLATFORM_DOMAIN),))


def _id_shift(kind: str, ident: str, n_channels: int, scale: float) -> np.ndarray:
    """Deterministic per-classroom / per-platform emission perturbation."""
    digest = hashlib.sha256(f"{kind}:{ident}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    return scale * rng.standard_normal(n_channels)


def _sample_states(
    cfg: SynthConfig, rng: np.random.Generator
) -> list[tuple[int, int, HiddenState]]:
    """Semi-Markov track: exponential dwell floored at 2 s, jump matrix with
    zero diagonal, starting on-task; truncated at the session end."""
    duration = cfg.session_duration_ms
    p_rows = [np.asarray(row, dtype=np.float64) for row in cfg.transitions]
    segments: list[tuple[int, int, HiddenState]] = []
    state_idx = 0
    t = 0
    while t < duration:
        mean_s = cfg.dwell_mean_s[STATES[state_idx]]
        dwell_ms = max(
            int(round(_MIN_DWELL_S * 1000)),
            int(round(rng.exponential(mean_s) * 1000.0)),
        )
        end = min(t + dwell_ms, duration)
        segments.append((t, end, STATES[state_idx]))
        t = end
        state_idx = int(rng.choice(3, p=p_rows[state_idx]))
    return segments


def generate_session(
    cfg: SynthConfig,
    cell: tuple[str, str],
    rng: np.random.Generator,
    session_id: str | None = None,
) -> GeneratedSession:
    """One simulated session for the given (classroom, platform) cell.

    Labels are written as exact state intervals (both off states map to
    off_task); URL events fire exactly when platform-ness changes.
    """
    classroom_id, platform_id = cell
    if session_id is None:
        session_id = f"{classroom_id}-{platform_id}-s00"
    arity = cfg.schema.arity
    groups = [group for _, group in cfg.schema.entries]
    rate = cfg.schema.sample_rate_hz

    segments = _sample_states(cfg, rng)

    labels = [
        LabelInterval(
            session_id=session_id,
            start_ms=start,
            end_ms=end,
            label=Label.ON_TASK if state is HiddenState.ON_TASK else Label.OFF_TASK,
        )
        for start, end, state in segments
    ]

    url_events: list[UrlEvent] = []
    on_platform: bool | None = None
    unit = 0
    distract = 0
    for start, _, state in segments:
        seg_on = state is not HiddenState.OFF_PLATFORM
        if seg_on != on_platform:
            if seg_on:
                unit += 1
                url = f"https://{platform_host(platform_id)}/unit/{unit}"
            else:
                url = _DISTRACTOR_URLS[distract % len(_DISTRACTOR_URLS)].format(k=distract)
                distract += 1
            url_events.append(UrlEvent(session_id=session_id, t_ms=start, url=url))
            on_platform = seg_on

    n_frames = int(math.ceil(cfg.session_duration_ms * rate / 1000.0))
    t_ms = np.rint(np.arange(n_frames) * (1000.0 / rate)).astype(np.int64)
    t_ms = t_ms[t_ms < cfg.session_duration_ms]
    n_frames = len(t_ms)
    t_s = t_ms.astype(np.float64) / 1000.0

    seg_starts = np.array([s for s, _, _ in segments], dtype=np.int64)
    state_of_frame = np.searchsorted(seg_starts, t_ms, side="right") - 1
    state_ids = np.array(
        [STATES.index(segments[i][2]) for i in range(len(segments))], dtype=np.int64
    )[state_of_frame]

    base = np.array([_BASE_BY_GROUP[g] for g in groups])
    shift = _id_shift("classroom", classroom_id, arity, cfg.classroom_shift)
    shift = shift + _id_shift("platform", platform_id, arity, cfg.platform_shift)
    offsets = np.array(
        [
            [cfg.appearance_separability * cfg.emissions[s].offset(g) for g in groups]
            for s in STATES
        ]
    )
    freq = np.array([cfg.emissions[s].osc_freq_hz for s in STATES])
    amp = np.array([cfg.emissions[s].osc_amp for s in STATES])
    noise_sd = np.array([cfg.emissions[s].noise_sd for s in STATES])
    drop_p = np.array([cfg.emissions[s].face_drop_prob for s in STATES])
    phases = np.arange(arity) * 2.399963229728653

    noise = rng.standard_normal((n_frames, arity))
    face_u = rng.random(n_frames)

    osc = amp[state_ids, None] * np.sin(
        2.0 * np.pi * freq[state_ids, None] * t_s[:, None] + phases[None, :]
    )
    values = (
        base[None, :]
        + shift[None, :]
        + offsets[state_ids]
        + osc
        + noise_sd[state_ids, None] * noise
    )
    face_detected = face_u >= drop_p[state_ids]
    values[~face_detected] = 0.0

    value_rows = values.tolist()
    frames = [
        FrameRecord(
            session_id=session_id,
            t_ms=int(t_ms[i]),
            face_detected=bool(face_detected[i]),
            channels=tuple(value_rows[i]),
        )
        for i in range(n_frames)
    ]

    timeline = build_timeline(
        frames,
        url_events,
        labels,
        SessionMetadata(classroom_id=classroom_id, platform_id=platform_id),
        duration_ms=cfg.session_duration_ms,
    )
    return GeneratedSession(
        timeline=timeline,
        true_states=tuple(segments),
    )


def generate_corpus(cfg: SynthConfig) -> SynthCorpus:
    """Independent sessions per cell, each from its own RNG substream, so
    generation order (or parallelism) cannot change the output."""
    cell_streams = np.random.SeedSequence(cfg.seed).spawn(len(cfg.cells))
    sessions: list[GeneratedSession] = []
    for ci, cell in enumerate(cfg.cells):
        session_streams = cell_streams[ci].spawn(cfg.n_sessions_per_cell)
        classroom_id, platform_id = cell
        for si in range(cfg.n_sessions_per_cell):
            rng = np.random.default_rng(session_streams[si])
            session_id = f"{classroom_id}-{platform_id}-s{si:02d}"
            sessions.append(generate_session(cfg, cell, rng, session_id=session_id))
    return SynthCorpus(
        sessions=tuple(sessions),
        cells=cfg.cells,
        patterns=default_patterns(),
        schema=cfg.schema,
        config=cfg,
    )


# ---------------------------------------------------------------------------
# analytic oracle


def expected_dwell_s(cfg: SynthConfig, state: HiddenState) -> float:
    """E[max(2, Exp(mu))] = 2 + mu * exp(-2/mu)."""
    mu = cfg.dwell_mean_s[state]
    return 2.0 + mu * math.exp(-2.0 / mu)


def expected_state_fractions(cfg: SynthConfig) -> dict[HiddenState, float]:
    """Stationary time fraction per state: embedded-chain stationary
    probabilities weighted by expected dwell."""
    p = np.asarray(cfg.transitions, dtype=np.float64)
    a = np.vstack([p.T - np.eye(3), np.ones(3)])
    b = np.array([0.0, 0.0, 0.0, 1.0])
    stationary, *_ = np.linalg.lstsq(a, b, rcond=None)
    dwell = np.array([expected_dwell_s(cfg, s) for s in STATES])
    weighted = stationary * dwell
    weighted = weighted / weighted.sum()
    return {s: float(weighted[i]) for i, s in enumerate(STATES)}


# ---------------------------------------------------------------------------
# corpus files

_STATE_HEADER = ["session_id", "start_ms", "end_ms", "state"]


def write_truth_states(sessions: Sequence[GeneratedSession], stream: IO[str]) -> None:
    import csv

    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(_STATE_HEADER)
    for session in sessions:
        sid = session.timeline.session_id
        for start, end, state in session.true_states:
            writer.writerow([sid, start, end, state.value])


def read_truth_states(stream: IO[str]) -> list[tuple[str, int, int, HiddenState]]:
    import csv

    rows = csv.reader(stream)
    header = next(rows, None)
    if header != _STATE_HEADER:
        raise ParseError(f"unexpected truth states header {header}")
    out = []
    for cells in rows:
        if not cells:
            continue
        out.append((cells[0], int(cells[1]), int(cells[2]), HiddenState(cells[3])))
    return out


def write_corpus(corpus: SynthCorpus, out_dir: str | Path) -> Path:
    """Write manifest, pattern file and per-session CSVs under out_dir."""
    root = Path(out_dir)
    (root / "sessions").mkdir(parents=True, exist_ok=True)
    with open(root / "platform_patterns.txt", "w", encoding="utf-8") as fh:
        write_platform_patterns(corpus.patterns, fh)

    by_cell: dict[tuple[str, str], list[dict]] = {cell: [] for cell in corpus.cells}
    for session in corpus.sessions:
        timeline = session.timeline
        sid = timeline.session_id
        entry = {
            "session_id": sid,
            "frames": f"sessions/{sid}.frames.csv",
            "urls": f"sessions/{sid}.urls.csv",
            "labels": f"sessions/{sid}.labels.csv",
            "duration_ms": timeline.duration_ms,
        }
        cell = (timeline.metadata.classroom_id, timeline.metadata.platform_id)
        by_cell[cell].append(entry)
        with open(root / entry["frames"], "w", encoding="utf-8") as fh:
            write_frames(timeline.frames, corpus.schema, fh)
        with open(root / entry["urls"], "w", encoding="utf-8") as fh:
            write_url_log(timeline.url_events, fh)
        with open(root / entry["labels"], "w", encoding="utf-8") as fh:
            write_labels(timeline.labels, fh)
    with open(root / "truth_states.csv", "w", encoding="utf-8") as fh:
        write_truth_states(corpus.sessions, fh)

    manifest = {
        "format_version": MANIFEST_FORMAT_VERSION,
        "schema": corpus.schema.to_json_obj(),
        "patterns": "platform_patterns.txt",
        "truth_states": "truth_states.csv",
        "seed": corpus.config.seed,
        "cells": [
            {
                "classroom_id": classroom,
                "platform_id": platform,
                "sessions": by_cell[(classroom, platform)],
            }
            for classroom, platform in corpus.cells
        ],
    }
    (root / pipeline.MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=False) + "\n", encoding="utf-8"
    )
    return root
