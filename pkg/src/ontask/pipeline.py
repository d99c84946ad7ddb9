"""Glue between the file formats and the in-memory stages.

Loads a corpus directory (manifest + per-session CSVs), builds window tables
and feature matrices across sessions, and assembles training datasets.
Everything here is deterministic plumbing shared by the CLI and the
experiment runner.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ontask import features as features_mod
from ontask import windowing
from ontask.errors import ValidationError
from ontask.features import FeatureMatrix, FeatureSpec
from ontask.forest import Dataset
from ontask.ingest import (
    ChannelSchema,
    Label,
    PlatformPatternSet,
    SessionMetadata,
    SessionTimeline,
    build_timeline,
    parse_frames,
    parse_labels,
    parse_platform_patterns,
    parse_url_log,
)
from ontask.windowing import Window, WindowConfig

MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class Corpus:
    """Loaded sessions plus the corpus-level schema and platform patterns."""

    sessions: tuple[SessionTimeline, ...]
    patterns: PlatformPatternSet
    schema: ChannelSchema

    def session(self, session_id: str) -> SessionTimeline:
        for timeline in self.sessions:
            if timeline.session_id == session_id:
                return timeline
        raise ValidationError(f"unknown session {session_id!r}")


def load_corpus(corpus_dir: str | Path) -> Corpus:
    """Read a corpus directory written by the synthesizer (or shaped like one)."""
    root = Path(corpus_dir)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise ValidationError(f"no {MANIFEST_NAME} in {root}")
    manifest = json.loads(manifest_path.read_text("utf-8"))
    schema = ChannelSchema.from_json_obj(manifest["schema"])
    with open(root / manifest["patterns"], encoding="utf-8") as fh:
        patterns = parse_platform_patterns(fh)

    timelines: list[SessionTimeline] = []
    for cell in manifest["cells"]:
        metadata = SessionMetadata(
            classroom_id=cell["classroom_id"], platform_id=cell["platform_id"]
        )
        for entry in cell["sessions"]:
            with open(root / entry["frames"], encoding="utf-8") as fh:
                frames = parse_frames(fh, schema)
            with open(root / entry["urls"], encoding="utf-8") as fh:
                url_events = parse_url_log(fh)
            with open(root / entry["labels"], encoding="utf-8") as fh:
                labels = parse_labels(fh)
            timelines.append(
                build_timeline(
                    frames,
                    url_events,
                    labels,
                    metadata,
                    duration_ms=int(entry["duration_ms"]),
                )
            )
    return Corpus(sessions=tuple(timelines), patterns=patterns, schema=schema)


def build_windows(corpus: Corpus, cfg: WindowConfig) -> list[Window]:
    """Window tables for every session, concatenated in session order."""
    out: list[Window] = []
    for timeline in corpus.sessions:
        out.extend(windowing.build_window_table(timeline, cfg, corpus.patterns))
    return out


def featurize(
    corpus: Corpus, windows: list[Window], spec: FeatureSpec
) -> FeatureMatrix:
    """Feature matrix aligned row-for-row with the window list."""
    names = features_mod.feature_names(corpus.schema, spec)
    by_session = {t.session_id: t for t in corpus.sessions}
    refs: list[tuple[str, int]] = []
    rows: list[np.ndarray] = []
    for window in windows:
        timeline = by_session.get(window.session_id)
        if timeline is None:
            raise ValidationError(f"window references unknown session {window.session_id!r}")
        vec = features_mod.featurize_window(window, timeline, corpus.schema, spec)
        refs.append(vec.window_ref)
        rows.append(vec.values)
    values = np.stack(rows) if rows else np.zeros((0, len(names)))
    return FeatureMatrix(names=names, refs=tuple(refs), values=values)


def training_dataset(
    windows: list[Window],
    matrix: FeatureMatrix,
    *,
    gate_threshold: float | None = None,
) -> Dataset:
    """Labeled rows as a forest Dataset.

    Unlabeled windows are always dropped; when gate_threshold is given,
    windows the context gate would catch (coverage < threshold) are dropped
    too, mirroring what the two-phase cascade sees at inference.
    """
    if len(windows) != len(matrix.refs):
        raise ValidationError("windows and feature matrix must align")
    keep: list[int] = []
    for i, w in enumerate(windows):
        if w.truth_label is Label.UNLABELED:
            continue
        if gate_threshold is not None and w.platform_coverage < gate_threshold:
            continue
        keep.append(i)
    if not keep:
        raise ValidationError("no labeled training windows after filtering")
    labels = np.array(
        [0 if windows[i].truth_label is Label.ON_TASK else 1 for i in keep],
        dtype=np.int64,
    )
    return Dataset(
        features=matrix.values[keep],
        labels=labels,
        feature_names=matrix.names,
        group_ids=tuple(windows[i].session_id for i in keep),
    )
