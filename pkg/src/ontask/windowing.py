"""Fixed-size sliding windows over session timelines.

Sessions are sliced into 8-second instances with a 4-second hop; each window
gets a platform-coverage fraction from the URL log and a ground-truth label
from the interval file.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, replace
from typing import IO, Sequence

import numpy as np

from ontask.errors import ParseError, ValidationError
from ontask.ingest import (
    Label,
    LabelInterval,
    PlatformPatternSet,
    SessionTimeline,
    UrlEvent,
    platform_intervals,
)


class LabelPolicy(enum.Enum):
    MAJORITY = "majority"
    STRICT = "strict"


@dataclass(frozen=True)
class WindowConfig:
    window_ms: int = 8000
    hop_ms: int = 4000
    label_policy: LabelPolicy = LabelPolicy.MAJORITY
    coverage_threshold: float = 0.5
    min_valid_frame_ratio: float = 0.5

    def __post_init__(self) -> None:
        if not 0 < self.hop_ms <= self.window_ms:
            raise ValidationError("require 0 < hop_ms <= window_ms")
        if not 0.0 <= self.coverage_threshold <= 1.0:
            raise ValidationError("coverage_threshold must be in [0, 1]")
        if not 0.0 <= self.min_valid_frame_ratio <= 1.0:
            raise ValidationError("min_valid_frame_ratio must be in [0, 1]")


@dataclass(frozen=True)
class Window:
    session_id: str
    index: int
    start_ms: int
    end_ms: int
    frame_slice: range
    platform_coverage: float
    valid_frame_ratio: float
    truth_label: Label


def slice_windows(timeline: SessionTimeline, cfg: WindowConfig) -> list[Window]:
    """Cut the session into full-length windows at start = k * hop_ms.

    The window grid depends only on duration and config, never on frame
    content. platform_coverage and truth_label are left at their defaults
    (0.0 / UNLABELED) for `platform_coverage` / `assign_label` to fill in.
    """
    if timeline.duration_ms < cfg.window_ms:
        return []
    count = (timeline.duration_ms - cfg.window_ms) // cfg.hop_ms + 1
    times = timeline.frame_times
    valid = timeline.frame_valid
    windows: list[Window] = []
    for k in range(count):
        start = k * cfg.hop_ms
        end = start + cfg.window_ms
        lo = int(np.searchsorted(times, start, side="left"))
        hi = int(np.searchsorted(times, end, side="left"))
        ratio = float(valid[lo:hi].mean()) if hi > lo else 0.0
        windows.append(
            Window(
                session_id=timeline.session_id,
                index=k,
                start_ms=start,
                end_ms=end,
                frame_slice=range(lo, hi),
                platform_coverage=0.0,
                valid_frame_ratio=ratio,
                truth_label=Label.UNLABELED,
            )
        )
    return windows


def _overlap_ms(window: Window, start: int, end: int) -> int:
    return max(0, min(window.end_ms, end) - max(window.start_ms, start))


def coverage_from_intervals(window: Window, intervals: Sequence[tuple[int, int]]) -> float:
    on_ms = sum(_overlap_ms(window, s, e) for s, e in intervals)
    return on_ms / (window.end_ms - window.start_ms)


def platform_coverage(
    window: Window,
    url_events: Sequence[UrlEvent],
    patterns: PlatformPatternSet,
) -> float:
    """Fraction of the window during which the active URL is on-platform.

    Uses the piecewise-constant active-URL function; time before the first
    event counts as off-platform.
    """
    intervals = platform_intervals(url_events, patterns, window.end_ms)
    return coverage_from_intervals(window, intervals)


def assign_label(
    window: Window,
    labels: Sequence[LabelInterval],
    policy: LabelPolicy = LabelPolicy.MAJORITY,
) -> Label:
    """Ground-truth label for a window from non-overlapping intervals.

    majority: the label covering the larger share of the window wins, ties go
    to OffTask, and windows with less than half their span labeled stay
    UNLABELED. strict: a label must cover the entire window.
    """
    window_ms = window.end_ms - window.start_ms
    on_ms = 0
    off_ms = 0
    for iv in labels:
        got = _overlap_ms(window, iv.start_ms, iv.end_ms)
        if iv.label is Label.ON_TASK:
            on_ms += got
        else:
            off_ms += got
    if policy is LabelPolicy.STRICT:
        if on_ms == window_ms:
            return Label.ON_TASK
        if off_ms == window_ms:
            return Label.OFF_TASK
        return Label.UNLABELED
    if 2 * (on_ms + off_ms) < window_ms:
        return Label.UNLABELED
    return Label.ON_TASK if on_ms > off_ms else Label.OFF_TASK


def build_window_table(
    timeline: SessionTimeline,
    cfg: WindowConfig,
    patterns: PlatformPatternSet,
) -> list[Window]:
    """slice_windows + platform_coverage + assign_label for one session."""
    intervals = platform_intervals(timeline.url_events, patterns, timeline.duration_ms)
    out: list[Window] = []
    for w in slice_windows(timeline, cfg):
        out.append(
            replace(
                w,
                platform_coverage=coverage_from_intervals(w, intervals),
                truth_label=assign_label(w, timeline.labels, cfg.label_policy),
            )
        )
    return out


# ---------------------------------------------------------------------------
# window table CSV

_WINDOW_HEADER = [
    "session_id",
    "index",
    "start_ms",
    "platform_coverage",
    "valid_frame_ratio",
    "truth_label",
]


def write_window_table(windows: Sequence[Window], stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(_WINDOW_HEADER)
    for w in windows:
        writer.writerow(
            [
                w.session_id,
                w.index,
                w.start_ms,
                repr(float(w.platform_coverage)),
                repr(float(w.valid_frame_ratio)),
                w.truth_label.value,
            ]
        )


def read_window_table(stream: IO[str], window_ms: int = 8000) -> list[Window]:
    """Read a window table written by write_window_table.

    frame_slice information is not persisted; rows come back with empty
    slices, which is all the downstream prediction/evaluation stages need.
    """
    rows = csv.reader(stream)
    header = next(rows, None)
    if header != _WINDOW_HEADER:
        raise ParseError(f"unexpected window table header {header}")
    windows: list[Window] = []
    for row_no, cells in enumerate(rows, start=2):
        if not cells:
            continue
        if len(cells) != len(_WINDOW_HEADER):
            raise ParseError(f"expected {len(_WINDOW_HEADER)} columns", row=row_no)
        session_id, index, start_ms, coverage, ratio, token = cells
        try:
            label = Label(token)
        except ValueError:
            raise ParseError(f"unknown label token {token!r}", row=row_no) from None
        start = int(start_ms)
        windows.append(
            Window(
                session_id=session_id,
                index=int(index),
                start_ms=start,
                end_ms=start + window_ms,
                frame_slice=range(0, 0),
                platform_coverage=float(coverage),
                valid_frame_ratio=float(ratio),
                truth_label=label,
            )
        )
    return windows
