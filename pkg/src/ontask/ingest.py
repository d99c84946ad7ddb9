"""Parsing, validation and alignment of the three session input streams.

Input files are plain CSV: a per-frame appearance stream, a URL activity log
and a ground-truth label file. This module parses them into validated
records, classifies URLs as on- or off-platform, and assembles everything
into an immutable per-session timeline.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from functools import cached_property
from typing import IO, Iterable, Sequence
from urllib.parse import urlsplit

import numpy as np

from ontask.errors import ParseError, ValidationError


class ChannelGroup(enum.Enum):
    FACE_LOCATION = "face_location"
    HEAD_POSE = "head_pose"
    LANDMARK = "landmark"
    EXPRESSION = "expression"
    EMOTION = "emotion"
    OTHER = "other"


class Label(enum.Enum):
    ON_TASK = "on_task"
    OFF_TASK = "off_task"
    UNLABELED = "unlabeled"


@dataclass(frozen=True)
class ChannelSchema:
    """Ordered appearance-channel declaration for one corpus."""

    entries: tuple[tuple[str, ChannelGroup], ...]
    sample_rate_hz: float

    def __post_init__(self) -> None:
        names = [name for name, _ in self.entries]
        if len(set(names)) != len(names):
            raise ValidationError("channel names must be unique")
        if not self.sample_rate_hz > 0:
            raise ValidationError("sample_rate_hz must be > 0")

    @property
    def arity(self) -> int:
        return len(self.entries)

    @property
    def channel_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.entries)

    def to_json_obj(self) -> dict:
        return {
            "entries": [[name, group.value] for name, group in self.entries],
            "sample_rate_hz": self.sample_rate_hz,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "ChannelSchema":
        entries = tuple(
            (str(name), ChannelGroup(group)) for name, group in obj["entries"]
        )
        return cls(entries=entries, sample_rate_hz=float(obj["sample_rate_hz"]))


def default_channel_schema(sample_rate_hz: float = 15.0) -> ChannelSchema:
    """Full 112-channel schema: 2 face-location + 3 head-pose coordinates,
    78 landmark positions, 22 expression intensities, 7 emotion scores."""
    entries: list[tuple[str, ChannelGroup]] = [
        ("face_x", ChannelGroup.FACE_LOCATION),
        ("face_y", ChannelGroup.FACE_LOCATION),
        ("pose_pitch", ChannelGroup.HEAD_POSE),
        ("pose_yaw", ChannelGroup.HEAD_POSE),
        ("pose_roll", ChannelGroup.HEAD_POSE),
    ]
    entries += [(f"lm_{i:03d}", ChannelGroup.LANDMARK) for i in range(78)]
    entries += [(f"expr_{i:02d}", ChannelGroup.EXPRESSION) for i in range(22)]
    entries += [
        (f"emo_{name}", ChannelGroup.EMOTION)
        for name in ("anger", "disgust", "fear", "joy", "sadness", "surprise", "neutral")
    ]
    return ChannelSchema(entries=tuple(entries), sample_rate_hz=sample_rate_hz)


@dataclass(frozen=True)
class FrameRecord:
    """One timestamped appearance sample.

    When face_detected is false the channel values are placeholders and must
    not be treated as observations.
    """

    session_id: str
    t_ms: int
    face_detected: bool
    channels: tuple[float, ...]


@dataclass(frozen=True)
class UrlEvent:
    """URL that became active at t_ms; stays active until the next event."""

    session_id: str
    t_ms: int
    url: str


@dataclass(frozen=True)
class LabelInterval:
    session_id: str
    start_ms: int
    end_ms: int
    label: Label

    def __post_init__(self) -> None:
        if self.start_ms >= self.end_ms:
            raise ValidationError(
                f"label interval start {self.start_ms} must be < end {self.end_ms}"
            )
        if self.label not in (Label.ON_TASK, Label.OFF_TASK):
            raise ValidationError(f"interval label must be on/off task, got {self.label}")


_PATTERN_KINDS = ("host_suffix", "prefix")


@dataclass(frozen=True)
class PlatformPatternSet:
    """URL patterns identifying the content platform.

    Pattern values are lowercase-normalized at construction.
    """

    patterns: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        normalized = []
        for kind, value in self.patterns:
            if kind not in _PATTERN_KINDS:
                raise ValidationError(f"unknown pattern kind {kind!r}")
            if not value:
                raise ValidationError("pattern value must be non-empty")
            normalized.append((kind, value.lower()))
        object.__setattr__(self, "patterns", tuple(normalized))


@dataclass(frozen=True)
class SessionMetadata:
    classroom_id: str
    platform_id: str

    def __post_init__(self) -> None:
        if not self.classroom_id or not self.platform_id:
            raise ValidationError("classroom_id and platform_id must be non-empty")


@dataclass(frozen=True)
class SessionTimeline:
    """Aligned frames, URL events and label intervals for one session.

    Immutable after construction; safe to share between threads.
    """

    session_id: str
    duration_ms: int
    frames: tuple[FrameRecord, ...]
    url_events: tuple[UrlEvent, ...]
    labels: tuple[LabelInterval, ...]
    metadata: SessionMetadata

    @cached_property
    def frame_times(self) -> np.ndarray:
        return np.array([f.t_ms for f in self.frames], dtype=np.int64)

    @cached_property
    def frame_valid(self) -> np.ndarray:
        return np.array([f.face_detected for f in self.frames], dtype=bool)

    @cached_property
    def frame_channels(self) -> np.ndarray:
        if not self.frames:
            return np.zeros((0, 0), dtype=np.float64)
        return np.array([f.channels for f in self.frames], dtype=np.float64)


# ---------------------------------------------------------------------------
# parsers


def _read_rows(stream: IO[str] | Iterable[str]) -> Iterable[tuple[int, list[str]]]:
    """Yield (1-based row number, cells), skipping fully empty rows."""
    for row_no, cells in enumerate(csv.reader(stream), start=1):
        if not cells:
            continue
        yield row_no, cells


def _parse_int(text: str, what: str, row: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"{what} {text!r} is not an integer", row=row) from None


def _parse_bool01(text: str, what: str, row: int) -> bool:
    if text == "0":
        return False
    if text == "1":
        return True
    raise ParseError(f"{what} must be 0 or 1, got {text!r}", row=row)


def parse_frames(stream: IO[str] | Iterable[str], schema: ChannelSchema) -> list[FrameRecord]:
    """Parse a frames CSV against the channel schema.

    Fails atomically: either every row parses and validates or a ParseError
    naming the offending row is raised.
    """
    expected_header = ["session_id", "t_ms", "face_detected", *schema.channel_names]
    rows = _read_rows(stream)
    try:
        row_no, header = next(rows)
    except StopIteration:
        raise ParseError("frames file is empty (missing header)") from None
    if header != expected_header:
        raise ParseError(
            f"frames header does not match schema: expected {expected_header[:4]}..., "
            f"got {header[:4]}...",
            row=row_no,
        )
    records: list[FrameRecord] = []
    last_t: dict[str, int] = {}
    for row_no, cells in rows:
        if len(cells) != 3 + schema.arity:
            raise ParseError(
                f"expected {schema.arity} channel values, got {len(cells) - 3}",
                row=row_no,
            )
        session_id = cells[0]
        t_ms = _parse_int(cells[1], "t_ms", row_no)
        if t_ms < 0:
            raise ParseError(f"t_ms must be >= 0, got {t_ms}", row=row_no)
        face = _parse_bool01(cells[2], "face_detected", row_no)
        try:
            channels = tuple(float(c) for c in cells[3:])
        except ValueError:
            raise ParseError("channel values must be decimal reals", row=row_no) from None
        prev = last_t.get(session_id)
        if prev is not None and t_ms <= prev:
            raise ParseError(
                f"non-monotonic t_ms {t_ms} after {prev} in session {session_id!r}",
                row=row_no,
            )
        last_t[session_id] = t_ms
        records.append(FrameRecord(session_id, t_ms, face, channels))
    return records


def write_frames(records: Sequence[FrameRecord], schema: ChannelSchema, stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["session_id", "t_ms", "face_detected", *schema.channel_names])
    for rec in records:
        writer.writerow(
            [rec.session_id, rec.t_ms, int(rec.face_detected)]
            + [repr(float(v)) for v in rec.channels]
        )


def parse_url_log(stream: IO[str] | Iterable[str]) -> list[UrlEvent]:
    """Parse a URL log CSV; URLs are kept verbatim (matching normalizes later)."""
    rows = _read_rows(stream)
    try:
        row_no, header = next(rows)
    except StopIteration:
        return []
    if header != ["session_id", "t_ms", "url"]:
        raise ParseError(f"unexpected url log header {header}", row=row_no)
    events: list[UrlEvent] = []
    last_t: dict[str, int] = {}
    for row_no, cells in rows:
        if len(cells) != 3:
            raise ParseError(f"expected 3 columns, got {len(cells)}", row=row_no)
        session_id, t_text, url = cells
        t_ms = _parse_int(t_text, "t_ms", row_no)
        if t_ms < 0:
            raise ParseError(f"t_ms must be >= 0, got {t_ms}", row=row_no)
        prev = last_t.get(session_id)
        if prev is not None and t_ms <= prev:
            raise ParseError(
                f"url events out of order: t_ms {t_ms} after {prev} in session "
                f"{session_id!r}",
                row=row_no,
            )
        last_t[session_id] = t_ms
        events.append(UrlEvent(session_id, t_ms, url))
    return events


def write_url_log(events: Sequence[UrlEvent], stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["session_id", "t_ms", "url"])
    for ev in events:
        writer.writerow([ev.session_id, ev.t_ms, ev.url])


def parse_labels(stream: IO[str] | Iterable[str]) -> list[LabelInterval]:
    """Parse a label interval CSV; intervals per session must not overlap."""
    rows = _read_rows(stream)
    try:
        row_no, header = next(rows)
    except StopIteration:
        return []
    if header != ["session_id", "start_ms", "end_ms", "label"]:
        raise ParseError(f"unexpected labels header {header}", row=row_no)
    intervals: list[LabelInterval] = []
    for row_no, cells in rows:
        if len(cells) != 4:
            raise ParseError(f"expected 4 columns, got {len(cells)}", row=row_no)
        session_id, start_text, end_text, token = cells
        start_ms = _parse_int(start_text, "start_ms", row_no)
        end_ms = _parse_int(end_text, "end_ms", row_no)
        if token not in (Label.ON_TASK.value, Label.OFF_TASK.value):
            raise ParseError(f"unknown label token {token!r}", row=row_no)
        if start_ms >= end_ms:
            raise ParseError(f"start_ms {start_ms} must be < end_ms {end_ms}", row=row_no)
        if start_ms < 0:
            raise ParseError(f"start_ms must be >= 0, got {start_ms}", row=row_no)
        intervals.append(LabelInterval(session_id, start_ms, end_ms, Label(token)))
    by_session: dict[str, list[LabelInterval]] = {}
    for iv in intervals:
        by_session.setdefault(iv.session_id, []).append(iv)
    for session_id, items in by_session.items():
        items.sort(key=lambda iv: iv.start_ms)
        for a, b in zip(items, items[1:]):
            if b.start_ms < a.end_ms:
                raise ParseError(
                    f"overlapping label intervals [{a.start_ms},{a.end_ms}) and "
                    f"[{b.start_ms},{b.end_ms}) in session {session_id!r}"
                )
    return sorted(intervals, key=lambda iv: (iv.session_id, iv.start_ms))


def write_labels(intervals: Sequence[LabelInterval], stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["session_id", "start_ms", "end_ms", "label"])
    for iv in intervals:
        writer.writerow([iv.session_id, iv.start_ms, iv.end_ms, iv.label.value])


def parse_platform_patterns(stream: IO[str] | Iterable[str]) -> PlatformPatternSet:
    """Parse the line-oriented pattern file (`host_suffix <v>` / `prefix <v>`)."""
    patterns: list[tuple[str, str]] = []
    for row_no, line in enumerate(stream, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        parts = text.split(None, 1)
        if len(parts) != 2 or parts[0] not in _PATTERN_KINDS:
            raise ParseError(f"expected 'host_suffix <value>' or 'prefix <value>', got {text!r}", row=row_no)
        patterns.append((parts[0], parts[1]))
    return PlatformPatternSet(patterns=tuple(patterns))


def write_platform_patterns(patterns: PlatformPatternSet, stream: IO[str]) -> None:
    for kind, value in patterns.patterns:
        stream.write(f"{kind} {value}\n")


# ---------------------------------------------------------------------------
# URL classification


def normalize_url(url: str) -> tuple[str, str]:
    """Strip scheme and port, lowercase the host, default the path to "/".

    Raises ValidationError for strings with no recoverable host; callers
    treat such events as off-platform.
    """
    raw = url.strip()
    if not raw:
        raise ValidationError("empty URL")
    try:
        parts = urlsplit(raw if "//" in raw else "//" + raw)
        host = parts.hostname
    except ValueError as exc:
        raise ValidationError(f"unparseable URL {url!r}: {exc}") from None
    if not host:
        raise ValidationError(f"unparseable URL {url!r}: no host")
    return host, parts.path or "/"


def match_platform(url: str, patterns: PlatformPatternSet) -> bool:
    """True iff the URL belongs to the content platform.

    host_suffix patterns match whole hosts on dot boundaries; prefix patterns
    match against host + path. Unparseable URLs are off-platform.
    """
    try:
        host, path = normalize_url(url)
    except ValidationError:
        return False
    target = host + path
    for kind, value in patterns.patterns:
        if kind == "host_suffix":
            if host == value or host.endswith("." + value):
                return True
        else:
            if target.startswith(value):
                return True
    return False


def active_url_intervals(
    url_events: Sequence[UrlEvent], duration_ms: int
) -> list[tuple[int, int, str]]:
    """Piecewise-constant active-URL segments [(start, end, url), ...).

    Before the first event there is no active URL (off-platform by rule);
    each event's URL stays active until the next event or session end.
    """
    segments: list[tuple[int, int, str]] = []
    for i, ev in enumerate(url_events):
        end = url_events[i + 1].t_ms if i + 1 < len(url_events) else duration_ms
        if ev.t_ms < end:
            segments.append((ev.t_ms, end, ev.url))
    return segments


def platform_intervals(
    url_events: Sequence[UrlEvent],
    patterns: PlatformPatternSet,
    duration_ms: int,
) -> list[tuple[int, int]]:
    """Merged [start, end) intervals during which the active URL is on-platform."""
    merged: list[tuple[int, int]] = []
    for start, end, url in active_url_intervals(url_events, duration_ms):
        if not match_platform(url, patterns):
            continue
        if merged and merged[-1][1] == start:
            merged[-1] = (merged[-1][0], end)
        else:
            merged.append((start, end))
    return merged


# ---------------------------------------------------------------------------
# timeline assembly


def build_timeline(
    frames: Sequence[FrameRecord],
    url_events: Sequence[UrlEvent],
    labels: Sequence[LabelInterval],
    metadata: SessionMetadata,
    duration_ms: int | None = None,
) -> SessionTimeline:
    """Assemble and validate a session timeline from parsed records.

    All records must share one session_id; duration defaults to the maximum
    timestamp seen in any stream.
    """
    session_ids = (
        {f.session_id for f in frames}
        | {e.session_id for e in url_events}
        | {l.session_id for l in labels}
    )
    if not session_ids:
        raise ValidationError("cannot build a timeline from empty inputs")
    if len(session_ids) > 1:
        raise ValidationError(
            f"records from multiple sessions mixed together: {sorted(session_ids)}"
        )
    session_id = session_ids.pop()

    for name, stream in (("frames", frames), ("url events", url_events)):
        for a, b in zip(stream, stream[1:]):
            if b.t_ms <= a.t_ms:
                raise ValidationError(
                    f"{name} must be strictly increasing in t_ms "
                    f"({a.t_ms} then {b.t_ms})"
                )

    max_t = 0
    for f in frames:
        max_t = max(max_t, f.t_ms)
    for e in url_events:
        max_t = max(max_t, e.t_ms)
    for l in labels:
        max_t = max(max_t, l.end_ms)
    if duration_ms is None:
        duration_ms = max_t
    elif max_t > duration_ms:
        raise ValidationError(
            f"timestamp {max_t} exceeds declared duration {duration_ms}"
        )

    return SessionTimeline(
        session_id=session_id,
        duration_ms=duration_ms,
        frames=tuple(frames),
        url_events=tuple(url_events),
        labels=tuple(labels),
        metadata=metadata,
    )
