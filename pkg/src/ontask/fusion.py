"""Two-phase decision rule: context gate first, appearance classifier second.

A window whose platform coverage falls below the gate threshold is predicted
Off-Task outright; everything else is passed to the random forest. The
appearance_only mode bypasses the gate entirely.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Sequence

import numpy as np

from ontask import forest as forest_mod
from ontask.errors import ModelFormatError, ParseError, ValidationError
from ontask.features import FeatureVector
from ontask.ingest import Label, PlatformPatternSet
from ontask.forest import RandomForestModel

TWO_PHASE_FORMAT_VERSION = 1


class FusionMode(enum.Enum):
    CONTEXT_AND_APPEARANCE = "context_and_appearance"
    APPEARANCE_ONLY = "appearance_only"


class PredictionSource(enum.Enum):
    CONTEXT_GATE = "context_gate"
    APPEARANCE_MODEL = "appearance_model"


@dataclass(frozen=True)
class TwoPhaseModel:
    patterns: PlatformPatternSet
    gate_threshold: float
    appearance: RandomForestModel
    mode: FusionMode

    def __post_init__(self) -> None:
        if not 0.0 <= self.gate_threshold <= 1.0:
            raise ValidationError("gate_threshold must be in [0, 1]")


@dataclass(frozen=True)
class Prediction:
    window_ref: tuple[str, int]
    label: Label
    source: PredictionSource
    proba_offtask: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.proba_offtask <= 1.0:
            raise ValidationError("proba_offtask must be in [0, 1]")
        if self.source is PredictionSource.CONTEXT_GATE and (
            self.label is not Label.OFF_TASK or self.proba_offtask != 1.0
        ):
            raise ValidationError("gate predictions are Off-Task with probability 1")


_CLASS_OF_ID = {0: Label.ON_TASK, 1: Label.OFF_TASK}


def predict_two_phase(
    model: TwoPhaseModel,
    features: FeatureVector,
    platform_coverage: float,
) -> Prediction:
    """One window through the cascade.

    Coverage below the threshold means Off-Task from the gate (probability
    1.0, hard decision); coverage at or above it goes to the forest.
    """
    gated = (
        model.mode is FusionMode.CONTEXT_AND_APPEARANCE
        and platform_coverage < model.gate_threshold
    )
    if gated:
        return Prediction(
            window_ref=features.window_ref,
            label=Label.OFF_TASK,
            source=PredictionSource.CONTEXT_GATE,
            proba_offtask=1.0,
        )
    proba = forest_mod.predict_proba(model.appearance, features.values)
    class_id = 1 if proba[1] >= proba[0] else 0
    return Prediction(
        window_ref=features.window_ref,
        label=_CLASS_OF_ID[class_id],
        source=PredictionSource.APPEARANCE_MODEL,
        proba_offtask=float(proba[1]),
    )


def predict_batch(
    model: TwoPhaseModel,
    features: Sequence[FeatureVector],
    coverages: Sequence[float],
) -> list[Prediction]:
    """Element-wise predict_two_phase, order preserved.

    Ungated rows are pushed through the forest in one batch; probabilities
    are identical to the per-window path.
    """
    if len(features) != len(coverages):
        raise ValidationError("features and coverages must align")
    if not features:
        return []
    gated = np.array(
        [
            model.mode is FusionMode.CONTEXT_AND_APPEARANCE
            and cov < model.gate_threshold
            for cov in coverages
        ],
        dtype=bool,
    )
    out: list[Prediction | None] = [None] * len(features)
    open_rows = np.flatnonzero(~gated)
    if len(open_rows):
        x = np.stack([features[i].values for i in open_rows])
        proba = forest_mod.predict_proba_batch(model.appearance, x)
        for row, p in zip(open_rows, proba):
            class_id = 1 if p[1] >= p[0] else 0
            out[row] = Prediction(
                window_ref=features[row].window_ref,
                label=_CLASS_OF_ID[class_id],
                source=PredictionSource.APPEARANCE_MODEL,
                proba_offtask=float(p[1]),
            )
    for row in np.flatnonzero(gated):
        out[row] = Prediction(
            window_ref=features[row].window_ref,
            label=Label.OFF_TASK,
            source=PredictionSource.CONTEXT_GATE,
            proba_offtask=1.0,
        )
    return out  # type: ignore[return-value]


# ---------------------------------------------------------------------------
# model file (forest JSON wrapped with the fusion fields)


def two_phase_to_bytes(model: TwoPhaseModel) -> bytes:
    obj = {
        "format_version": TWO_PHASE_FORMAT_VERSION,
        "kind": "two_phase_engagement_model",
        "mode": model.mode.value,
        "gate_threshold": model.gate_threshold,
        "platform_patterns": [[k, v] for k, v in model.patterns.patterns],
        "appearance": forest_mod.model_to_json_obj(model.appearance),
    }
    return (json.dumps(obj, separators=(",", ":")) + "\n").encode("utf-8")


def save_two_phase(model: TwoPhaseModel, sink: str | Path | IO[bytes]) -> None:
    data = two_phase_to_bytes(model)
    if isinstance(sink, (str, Path)):
        Path(sink).write_bytes(data)
    else:
        sink.write(data)


def load_two_phase(source: str | Path | IO[bytes]) -> TwoPhaseModel:
    if isinstance(source, (str, Path)):
        data = Path(source).read_bytes()
    else:
        data = source.read()
    try:
        obj = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"not a model file: {exc}") from None
    if not isinstance(obj, dict) or obj.get("kind") != "two_phase_engagement_model":
        raise ModelFormatError("not a two-phase model file")
    if obj.get("format_version") != TWO_PHASE_FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported two-phase format_version {obj.get('format_version')!r}"
        )
    try:
        return TwoPhaseModel(
            patterns=PlatformPatternSet(
                patterns=tuple((str(k), str(v)) for k, v in obj["platform_patterns"])
            ),
            gate_threshold=float(obj["gate_threshold"]),
            appearance=forest_mod.model_from_json_obj(obj["appearance"]),
            mode=FusionMode(obj["mode"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed two-phase model file: {exc}") from None


# ---------------------------------------------------------------------------
# predictions CSV

_PREDICTION_HEADER = ["session_id", "index", "label", "source", "proba_offtask"]


def write_predictions(predictions: Sequence[Prediction], stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(_PREDICTION_HEADER)
    for p in predictions:
        writer.writerow(
            [
                p.window_ref[0],
                p.window_ref[1],
                p.label.value,
                p.source.value,
                repr(float(p.proba_offtask)),
            ]
        )


def read_predictions(stream: IO[str]) -> list[Prediction]:
    rows = csv.reader(stream)
    header = next(rows, None)
    if header != _PREDICTION_HEADER:
        raise ParseError(f"unexpected predictions header {header}")
    out: list[Prediction] = []
    for row_no, cells in enumerate(rows, start=2):
        if not cells:
            continue
        if len(cells) != len(_PREDICTION_HEADER):
            raise ParseError(f"expected {len(_PREDICTION_HEADER)} columns", row=row_no)
        try:
            out.append(
                Prediction(
                    window_ref=(cells[0], int(cells[1])),
                    label=Label(cells[2]),
                    source=PredictionSource(cells[3]),
                    proba_offtask=float(cells[4]),
                )
            )
        except ValueError as exc:
            raise ParseError(f"malformed prediction row: {exc}", row=row_no) from None
    return out
