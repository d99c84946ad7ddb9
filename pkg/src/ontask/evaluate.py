"""Classification metrics and the cross-classroom / cross-platform runner.

Metrics: per-class F1, support-weighted and macro overall F1, accuracy,
marginal chance accuracy, Cohen's kappa. The experiment runner trains and
evaluates each requested fusion mode on selector-defined train/test splits
and renders the results as aligned per-class tables.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import IO, Mapping, Sequence

import numpy as np

from ontask import fusion as fusion_mod
from ontask import pipeline
from ontask.errors import ExperimentConfigError, ValidationError
from ontask.features import FeatureMatrix, FeatureSpec
from ontask.forest import TrainConfig, train_forest
from ontask.fusion import FusionMode, Prediction, PredictionSource, TwoPhaseModel
from ontask.ingest import Label, SessionMetadata
from ontask.windowing import Window, WindowConfig

_CLASS_IDS = {Label.ON_TASK: 0, Label.OFF_TASK: 1}


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """2x2 counts; rows are truth (OnTask, OffTask), columns are prediction."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", counts)
        if counts.shape != (2, 2):
            raise ValidationError("confusion matrix must be 2x2")
        if (counts < 0).any():
            raise ValidationError("confusion matrix entries must be >= 0")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return bool(np.array_equal(self.counts, other.counts))

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(preds: Sequence[Label], truths: Sequence[Label]) -> ConfusionMatrix:
    """Count (truth, prediction) pairs; truths must exclude UNLABELED."""
    if len(preds) != len(truths):
        raise ValidationError("predictions and truths must have equal length")
    counts = np.zeros((2, 2), dtype=np.int64)
    for p, t in zip(preds, truths):
        if t is Label.UNLABELED:
            raise ValidationError("truth labels must exclude UNLABELED")
        if p is Label.UNLABELED:
            raise ValidationError("predictions are never UNLABELED")
        counts[_CLASS_IDS[t], _CLASS_IDS[p]] += 1
    return ConfusionMatrix(counts)


def _f1_for(cm: ConfusionMatrix, class_id: int) -> float:
    tp = float(cm.counts[class_id, class_id])
    fp = float(cm.counts[1 - class_id, class_id])
    fn = float(cm.counts[class_id, 1 - class_id])
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def f1_per_class(cm: ConfusionMatrix) -> tuple[float, float]:
    """(f1_on_task, f1_off_task); empty denominators give 0 by convention."""
    return _f1_for(cm, 0), _f1_for(cm, 1)


def overall_f1(cm: ConfusionMatrix) -> tuple[float, float]:
    """(support-weighted, macro) mean of the per-class F1 scores."""
    f1_on, f1_off = f1_per_class(cm)
    support_on = float(cm.counts[0].sum())
    support_off = float(cm.counts[1].sum())
    total = support_on + support_off
    if total == 0.0:
        raise ValidationError("cannot compute overall F1 of an empty matrix")
    weighted = (support_on * f1_on + support_off * f1_off) / total
    macro = (f1_on + f1_off) / 2.0
    return weighted, macro


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise ValidationError("cannot compute accuracy of an empty matrix")
    return float(np.trace(cm.counts)) / cm.total


def chance_accuracy(cm: ConfusionMatrix) -> float:
    """Marginal agreement probability p_e = sum_k (row_k/N) * (col_k/N)."""
    n = cm.total
    if n == 0:
        raise ValidationError("cannot compute chance accuracy of an empty matrix")
    rows = cm.counts.sum(axis=1) / n
    cols = cm.counts.sum(axis=0) / n
    return float(np.sum(rows * cols))


def cohens_kappa(cm: ConfusionMatrix) -> float:
    """kappa = (p_o - p_e) / (1 - p_e); defined as 0 when p_e = 1."""
    p_o = accuracy(cm)
    p_e = chance_accuracy(cm)
    if p_e == 1.0:
        return 0.0
    return (p_o - p_e) / (1.0 - p_e)


@dataclass(frozen=True)
class EvalReport:
    confusion: ConfusionMatrix
    f1_on_task: float
    f1_off_task: float
    overall_f1_weighted: float
    overall_f1_macro: float
    accuracy: float
    chance_accuracy: float
    kappa: float
    kappa_degenerate: bool
    n_windows: int
    n_gate_predictions: int


def build_report(
    predictions: Sequence[Prediction],
    truth_by_ref: Mapping[tuple[str, int], Label],
) -> EvalReport:
    """Score predictions against window truth labels.

    Windows whose truth is UNLABELED are excluded from the metrics (they
    still carry predictions); gate decisions are counted alongside.
    """
    preds: list[Label] = []
    truths: list[Label] = []
    n_gate = 0
    for p in predictions:
        truth = truth_by_ref.get(p.window_ref, Label.UNLABELED)
        if truth is Label.UNLABELED:
            continue
        preds.append(p.label)
        truths.append(truth)
        if p.source is PredictionSource.CONTEXT_GATE:
            n_gate += 1
    if not preds:
        raise ValidationError("no labeled windows to evaluate")
    cm = confusion(preds, truths)
    f1_on, f1_off = f1_per_class(cm)
    weighted, macro = overall_f1(cm)
    p_e = chance_accuracy(cm)
    return EvalReport(
        confusion=cm,
        f1_on_task=f1_on,
        f1_off_task=f1_off,
        overall_f1_weighted=weighted,
        overall_f1_macro=macro,
        accuracy=accuracy(cm),
        chance_accuracy=p_e,
        kappa=cohens_kappa(cm),
        kappa_degenerate=p_e == 1.0,
        n_windows=cm.total,
        n_gate_predictions=n_gate,
    )


# ---------------------------------------------------------------------------
# experiment runner


@dataclass(frozen=True)
class Selector:
    """Conjunction of classroom/platform constraints; None means any."""

    classrooms: frozenset[str] | None = None
    platforms: frozenset[str] | None = None

    def matches(self, metadata: SessionMetadata) -> bool:
        if self.classrooms is not None and metadata.classroom_id not in self.classrooms:
            return False
        if self.platforms is not None and metadata.platform_id not in self.platforms:
            return False
        return True

    @classmethod
    def parse(cls, text: str) -> "Selector":
        """Parse e.g. "classroom=c1,platform=math" ('|' separates alternatives,
        '*' or a missing field matches anything)."""
        classrooms: frozenset[str] | None = None
        platforms: frozenset[str] | None = None
        text = text.strip()
        if text in ("", "*"):
            return cls()
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            if "=" not in part:
                raise ExperimentConfigError(f"bad selector term {part!r}")
            key, value = (s.strip() for s in part.split("=", 1))
            values = frozenset(v.strip() for v in value.split("|") if v.strip())
            if value.strip() == "*":
                values = None
            if key == "classroom":
                classrooms = values
            elif key == "platform":
                platforms = values
            else:
                raise ExperimentConfigError(f"unknown selector field {key!r}")
        return cls(classrooms=classrooms, platforms=platforms)

    def display(self) -> str:
        parts = []
        if self.classrooms is not None:
            parts.append("classroom=" + "|".join(sorted(self.classrooms)))
        if self.platforms is not None:
            parts.append("platform=" + "|".join(sorted(self.platforms)))
        return ",".join(parts) if parts else "*"


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    train_selector: Selector
    test_selector: Selector
    modes: tuple[FusionMode, ...] = (
        FusionMode.APPEARANCE_ONLY,
        FusionMode.CONTEXT_AND_APPEARANCE,
    )
    table: str = "experiments"
    allow_self_test: bool = False
    train_config: TrainConfig = TrainConfig()
    feature_spec: FeatureSpec = FeatureSpec()
    window_config: WindowConfig = WindowConfig()
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.modes:
            raise ExperimentConfigError("at least one fusion mode is required")


@dataclass(frozen=True)
class ExperimentRun:
    config: ExperimentConfig
    reports: dict[FusionMode, EvalReport]
    n_train_windows: dict[FusionMode, int]
    n_test_windows: int


class FeatureCache:
    """Memoizes window tables and feature matrices per (window, feature) config."""

    def __init__(self, corpus: pipeline.Corpus) -> None:
        self.corpus = corpus
        self._windows: dict[WindowConfig, list[Window]] = {}
        self._features: dict[tuple[WindowConfig, FeatureSpec], FeatureMatrix] = {}

    def windows(self, cfg: WindowConfig) -> list[Window]:
        if cfg not in self._windows:
            self._windows[cfg] = pipeline.build_windows(self.corpus, cfg)
        return self._windows[cfg]

    def features(self, window_cfg: WindowConfig, spec: FeatureSpec) -> FeatureMatrix:
        key = (window_cfg, spec)
        if key not in self._features:
            self._features[key] = pipeline.featurize(
                self.corpus, self.windows(window_cfg), spec
            )
        return self._features[key]


def _subset(
    windows: list[Window], matrix: FeatureMatrix, session_ids: set[str]
) -> tuple[list[Window], FeatureMatrix]:
    idx = [i for i, w in enumerate(windows) if w.session_id in session_ids]
    sub_matrix = FeatureMatrix(
        names=matrix.names,
        refs=tuple(matrix.refs[i] for i in idx),
        values=matrix.values[idx] if idx else matrix.values[:0],
    )
    return [windows[i] for i in idx], sub_matrix


def run_experiment(
    corpus: pipeline.Corpus,
    config: ExperimentConfig,
    cache: FeatureCache | None = None,
) -> ExperimentRun:
    """Train on the train-selector windows, evaluate on the test-selector ones.

    Train and test window sets must be disjoint unless allow_self_test is
    set. In context_and_appearance mode the windows the gate would catch are
    excluded from forest training; they never reach Phase 2 at inference.
    """
    cache = cache or FeatureCache(corpus)
    train_sessions = {
        t.session_id for t in corpus.sessions if config.train_selector.matches(t.metadata)
    }
    test_sessions = {
        t.session_id for t in corpus.sessions if config.test_selector.matches(t.metadata)
    }
    if not train_sessions:
        raise ExperimentConfigError(
            f"train selector {config.train_selector.display()!r} selects no sessions"
        )
    if not test_sessions:
        raise ExperimentConfigError(
            f"test selector {config.test_selector.display()!r} selects no sessions"
        )
    overlap = train_sessions & test_sessions
    if overlap and not config.allow_self_test:
        raise ExperimentConfigError(
            f"train/test selections overlap on sessions {sorted(overlap)}; "
            "set allow_self_test to evaluate in-set"
        )

    windows = cache.windows(config.window_config)
    matrix = cache.features(config.window_config, config.feature_spec)
    train_windows, train_matrix = _subset(windows, matrix, train_sessions)
    test_windows, test_matrix = _subset(windows, matrix, test_sessions)
    if not test_windows:
        raise ExperimentConfigError("test selection contains no windows")

    truth_by_ref = {(w.session_id, w.index): w.truth_label for w in test_windows}
    coverages = [w.platform_coverage for w in test_windows]
    test_vectors = [test_matrix.row(i) for i in range(len(test_windows))]
    theta = config.window_config.coverage_threshold

    reports: dict[FusionMode, EvalReport] = {}
    n_train: dict[FusionMode, int] = {}
    for mode in config.modes:
        gate = theta if mode is FusionMode.CONTEXT_AND_APPEARANCE else None
        try:
            dataset = pipeline.training_dataset(
                train_windows, train_matrix, gate_threshold=gate
            )
        except ValidationError as exc:
            raise ExperimentConfigError(f"train selection unusable: {exc}") from None
        train_cfg = replace(config.train_config, seed=config.seed)
        model = train_forest(dataset, train_cfg)
        two_phase = TwoPhaseModel(
            patterns=corpus.patterns,
            gate_threshold=theta,
            appearance=model,
            mode=mode,
        )
        predictions = fusion_mod.predict_batch(two_phase, test_vectors, coverages)
        reports[mode] = build_report(predictions, truth_by_ref)
        n_train[mode] = dataset.n_rows
    return ExperimentRun(
        config=config,
        reports=reports,
        n_train_windows=n_train,
        n_test_windows=len(test_windows),
    )


# ---------------------------------------------------------------------------
# rendering

_MODE_TITLES = {
    FusionMode.APPEARANCE_ONLY: "Appr",
    FusionMode.CONTEXT_AND_APPEARANCE: "Context+Appr",
}

_CLASS_ROWS = ("On-Task", "Off-Task", "Overall")


def _row_values(report: EvalReport) -> dict[str, float]:
    return {
        "On-Task": report.f1_on_task,
        "Off-Task": report.f1_off_task,
        "Overall": report.overall_f1_weighted,
    }


def format_experiment_tables(runs: Sequence[ExperimentRun]) -> str:
    """Aligned text tables (one per table group): Train, Test, Class, then one
    F1 column per fusion mode."""
    groups: dict[str, list[ExperimentRun]] = {}
    for run in runs:
        groups.setdefault(run.config.table, []).append(run)

    blocks: list[str] = []
    for table_name, group in groups.items():
        modes = [m for m in _MODE_TITLES if any(m in r.reports for r in group)]
        header = ["Train", "Test", "Class"] + [_MODE_TITLES[m] for m in modes]
        rows: list[list[str]] = []
        for run in group:
            train = run.config.train_selector.display()
            test = run.config.test_selector.display()
            for class_row in _CLASS_ROWS:
                cells = [train, test, class_row]
                for mode in modes:
                    report = run.reports.get(mode)
                    cells.append(
                        f"{_row_values(report)[class_row]:.2f}" if report else "-"
                    )
                rows.append(cells)
                train = test = ""
        widths = [
            max(len(header[c]), *(len(r[c]) for r in rows)) for c in range(len(header))
        ]
        lines = [f"F1-scores: {table_name}"]
        lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
        lines.append("  ".join("-" * w for w in widths))
        for r in rows:
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def write_experiment_csv(runs: Sequence[ExperimentRun], stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(
        [
            "table",
            "train",
            "test",
            "mode",
            "f1_on_task",
            "f1_off_task",
            "overall_f1_weighted",
            "overall_f1_macro",
            "accuracy",
            "chance_accuracy",
            "kappa",
            "n_windows",
            "n_gate_predictions",
        ]
    )
    for run in runs:
        for mode, report in run.reports.items():
            writer.writerow(
                [
                    run.config.table,
                    run.config.train_selector.display(),
                    run.config.test_selector.display(),
                    mode.value,
                    repr(report.f1_on_task),
                    repr(report.f1_off_task),
                    repr(report.overall_f1_weighted),
                    repr(report.overall_f1_macro),
                    repr(report.accuracy),
                    repr(report.chance_accuracy),
                    repr(report.kappa),
                    report.n_windows,
                    report.n_gate_predictions,
                ]
            )
