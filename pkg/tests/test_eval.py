import io

import numpy as np
import pytest

from oracles import brute_force_metrics

from ontask.errors import ExperimentConfigError, ValidationError
from ontask.evaluate import (
    ConfusionMatrix,
    EvalReport,
    ExperimentConfig,
    FeatureCache,
    Selector,
    accuracy,
    build_report,
    chance_accuracy,
    cohens_kappa,
    confusion,
    f1_per_class,
    format_experiment_tables,
    overall_f1,
    run_experiment,
    write_experiment_csv,
)
from ontask.features import FeatureSpec
from ontask.forest import TrainConfig
from ontask.fusion import FusionMode, Prediction, PredictionSource
from ontask.ingest import (
    ChannelGroup,
    ChannelSchema,
    FrameRecord,
    Label,
    LabelInterval,
    PlatformPatternSet,
    SessionMetadata,
    UrlEvent,
    build_timeline,
)
from ontask.pipeline import Corpus
from ontask.windowing import WindowConfig


def cm(a, b, c, d) -> ConfusionMatrix:
    return ConfusionMatrix(np.array([[a, b], [c, d]]))


class TestConfusion:
    def test_perfect_predictions_are_diagonal(self):
        labels = [Label.ON_TASK] * 3 + [Label.OFF_TASK] * 2
        got = confusion(labels, labels)
        assert got.counts.tolist() == [[3, 0], [0, 2]]

    def test_all_off_task_on_balanced_truth(self):
        preds = [Label.OFF_TASK] * 10
        truths = [Label.ON_TASK] * 5 + [Label.OFF_TASK] * 5
        assert confusion(preds, truths).counts.tolist() == [[0, 5], [0, 5]]

    def test_hand_tally(self):
        rng = np.random.default_rng(0)
        preds = [Label.ON_TASK if v else Label.OFF_TASK for v in rng.integers(0, 2, 20)]
        truths = [Label.ON_TASK if v else Label.OFF_TASK for v in rng.integers(0, 2, 20)]
        got = confusion(preds, truths)
        manual = [[0, 0], [0, 0]]
        for p, t in zip(preds, truths):
            manual[int(t is Label.OFF_TASK)][int(p is Label.OFF_TASK)] += 1
        assert got.counts.tolist() == manual

    def test_unlabeled_truth_rejected(self):
        with pytest.raises(ValidationError):
            confusion([Label.ON_TASK], [Label.UNLABELED])


class TestF1:
    def test_arithmetic_example(self):
        # on-task: TP=8, FP=2, FN=2 -> precision = recall = 0.8 -> F1 = 0.8
        f1_on, _ = f1_per_class(cm(8, 2, 2, 8))
        assert f1_on == pytest.approx(0.8)

    def test_perfect(self):
        assert f1_per_class(cm(5, 0, 0, 5)) == (1.0, 1.0)

    def test_absent_class_scores_zero(self):
        _, f1_off = f1_per_class(cm(5, 0, 0, 0))
        assert f1_off == 0.0

    def test_overall_balanced_supports(self):
        weighted, macro = overall_f1(cm(4, 1, 1, 4))
        assert weighted == pytest.approx(macro)

    def test_overall_weighted_arithmetic(self):
        matrix = cm(85, 5, 6, 4)
        f1_on, f1_off = f1_per_class(matrix)
        weighted, macro = overall_f1(matrix)
        assert weighted == pytest.approx((90 * f1_on + 10 * f1_off) / 100)
        assert macro == pytest.approx((f1_on + f1_off) / 2)

    def test_single_class_truth(self):
        matrix = cm(9, 1, 0, 0)
        f1_on, _ = f1_per_class(matrix)
        weighted, _ = overall_f1(matrix)
        assert weighted == pytest.approx(f1_on)

    def test_weighted_between_min_and_max(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            matrix = ConfusionMatrix(rng.integers(0, 20, size=(2, 2)))
            if matrix.total == 0:
                continue
            f1s = f1_per_class(matrix)
            weighted, _ = overall_f1(matrix)
            assert min(f1s) - 1e-12 <= weighted <= max(f1s) + 1e-12


class TestChanceAccuracyAndKappa:
    def test_uniform_matrix(self):
        assert chance_accuracy(cm(25, 25, 25, 25)) == pytest.approx(0.5)

    def test_marginal_products(self):
        assert chance_accuracy(cm(60, 10, 10, 20)) == pytest.approx(0.58)

    def test_degenerate_zero_row_and_column(self):
        assert chance_accuracy(cm(10, 0, 0, 0)) == pytest.approx(1.0)

    def test_reported_values_reconcile(self):
        # p_o = 0.77 with p_e = 0.48 must land on kappa ~ 0.5577
        matrix = cm(77, 3, 43, 77)
        assert accuracy(matrix) == pytest.approx(0.77)
        assert chance_accuracy(matrix) == pytest.approx(0.48)
        assert 0.55 <= cohens_kappa(matrix) <= 0.56

    def test_perfect_agreement(self):
        assert cohens_kappa(cm(5, 0, 0, 7)) == pytest.approx(1.0)

    def test_single_predicted_class_gives_zero(self):
        assert cohens_kappa(cm(6, 0, 4, 0)) == pytest.approx(0.0)

    def test_degenerate_pe_one_defined_as_zero(self):
        assert cohens_kappa(cm(10, 0, 0, 0)) == 0.0

    def test_kappa_one_iff_diagonal(self):
        rng = np.random.default_rng(9)
        for _ in range(60):
            matrix = ConfusionMatrix(rng.integers(0, 15, size=(2, 2)))
            counts = matrix.counts
            if matrix.total == 0 or chance_accuracy(matrix) == 1.0:
                continue
            diagonal = counts[0, 1] == 0 and counts[1, 0] == 0
            assert (cohens_kappa(matrix) == pytest.approx(1.0)) == diagonal

    def test_kappa_below_observed_accuracy(self):
        rng = np.random.default_rng(10)
        for _ in range(60):
            matrix = ConfusionMatrix(rng.integers(1, 15, size=(2, 2)))
            p_o = accuracy(matrix)
            p_e = chance_accuracy(matrix)
            if 0.0 < p_e and p_o < 1.0:
                assert cohens_kappa(matrix) < p_o


def test_metric_oracle_on_random_cases():
    rng = np.random.default_rng(42)
    enum_of = {0: Label.ON_TASK, 1: Label.OFF_TASK}
    for _ in range(50):
        n = int(rng.integers(1, 31))
        preds = rng.integers(0, 2, n)
        truths = rng.integers(0, 2, n)
        matrix = confusion([enum_of[p] for p in preds], [enum_of[t] for t in truths])
        want = brute_force_metrics(list(preds), list(truths))
        f1_on, f1_off = f1_per_class(matrix)
        weighted, macro = overall_f1(matrix)
        assert f1_on == pytest.approx(want["f1_on"], abs=1e-12)
        assert f1_off == pytest.approx(want["f1_off"], abs=1e-12)
        assert weighted == pytest.approx(want["weighted"], abs=1e-12)
        assert macro == pytest.approx(want["macro"], abs=1e-12)
        assert accuracy(matrix) == pytest.approx(want["accuracy"], abs=1e-12)
        assert chance_accuracy(matrix) == pytest.approx(want["chance"], abs=1e-12)
        assert cohens_kappa(matrix) == pytest.approx(want["kappa"], abs=1e-12)


class TestBuildReport:
    def test_excludes_unlabeled_and_counts_gates(self):
        preds = [
            Prediction(("s", 0), Label.OFF_TASK, PredictionSource.CONTEXT_GATE, 1.0),
            Prediction(("s", 1), Label.ON_TASK, PredictionSource.APPEARANCE_MODEL, 0.2),
            Prediction(("s", 2), Label.ON_TASK, PredictionSource.APPEARANCE_MODEL, 0.4),
        ]
        truth = {
            ("s", 0): Label.OFF_TASK,
            ("s", 1): Label.ON_TASK,
            ("s", 2): Label.UNLABELED,
        }
        report = build_report(preds, truth)
        assert report.n_windows == 2
        assert report.n_gate_predictions == 1
        assert report.accuracy == 1.0

    def test_no_labeled_windows_is_an_error(self):
        preds = [Prediction(("s", 0), Label.ON_TASK, PredictionSource.APPEARANCE_MODEL, 0.1)]
        with pytest.raises(ValidationError):
            build_report(preds, {("s", 0): Label.UNLABELED})


class TestSelector:
    def test_parse_and_match(self):
        sel = Selector.parse("classroom=c1,platform=math")
        assert sel.matches(SessionMetadata("c1", "math"))
        assert not sel.matches(SessionMetadata("c2", "math"))

    def test_alternation(self):
        sel = Selector.parse("classroom=c1|c2")
        assert sel.matches(SessionMetadata("c2", "esl"))

    def test_wildcard(self):
        assert Selector.parse("*").matches(SessionMetadata("cX", "pY"))

    def test_unknown_field_rejected(self):
        with pytest.raises(ExperimentConfigError):
            Selector.parse("teacher=bob")


# ---------------------------------------------------------------------------
# run_experiment on a tiny hand-built corpus

SCHEMA = ChannelSchema(entries=(("ch", ChannelGroup.LANDMARK),), sample_rate_hz=10.0)
PATTERNS = PlatformPatternSet(patterns=(("host_suffix", "p.x"),))


def _session(session_id, classroom, platform, mostly_on, seed):
    """64 s session, alternating 8 s label blocks; channel mean tracks label."""
    rng = np.random.default_rng(seed)
    duration = 64_000
    labels = []
    frames = []
    for block in range(8):
        start = block * 8000
        on_block = (block % 2 == 0) if mostly_on else (block % 4 == 0)
        label = Label.ON_TASK if on_block else Label.OFF_TASK
        labels.append(LabelInterval(session_id, start, start + 8000, label))
        mean = -1.0 if on_block else 1.0
        for i in range(80):
            t = start + i * 100
            frames.append(
                FrameRecord(session_id, t, True, (mean + 0.3 * rng.standard_normal(),))
            )
    events = [UrlEvent(session_id, 0, "https://p.x/unit")]
    return build_timeline(
        frames, events, labels, SessionMetadata(classroom, platform), duration
    )


@pytest.fixture(scope="module")
def tiny_corpus():
    sessions = (
        _session("a1", "c1", "math", True, 1),
        _session("a2", "c1", "math", False, 2),
        _session("b1", "c2", "math", True, 3),
        _session("b2", "c2", "math", False, 4),
    )
    return Corpus(sessions=sessions, patterns=PATTERNS, schema=SCHEMA)


def quick_config(**kwargs):
    defaults = dict(
        name="t",
        train_selector=Selector.parse("classroom=c1"),
        test_selector=Selector.parse("classroom=c2"),
        train_config=TrainConfig(n_trees=10, min_samples_leaf=2),
        feature_spec=FeatureSpec(),
        window_config=WindowConfig(),
        seed=3,
    )
    defaults.update(kwargs)
    return ExperimentConfig(**defaults)


class TestRunExperiment:
    def test_produces_reports_for_each_mode(self, tiny_corpus):
        run = run_experiment(tiny_corpus, quick_config())
        assert set(run.reports) == {
            FusionMode.APPEARANCE_ONLY,
            FusionMode.CONTEXT_AND_APPEARANCE,
        }
        for report in run.reports.values():
            assert isinstance(report, EvalReport)
            assert report.n_windows > 0

    def test_self_test_requires_flag(self, tiny_corpus):
        config = quick_config(test_selector=Selector.parse("classroom=c1"))
        with pytest.raises(ExperimentConfigError, match="overlap"):
            run_experiment(tiny_corpus, config)
        run = run_experiment(tiny_corpus, quick_config(
            test_selector=Selector.parse("classroom=c1"), allow_self_test=True
        ))
        assert run.n_test_windows > 0

    def test_empty_selection_is_an_error(self, tiny_corpus):
        config = quick_config(train_selector=Selector.parse("classroom=zz"))
        with pytest.raises(ExperimentConfigError, match="no sessions"):
            run_experiment(tiny_corpus, config)

    def test_learns_the_appearance_signal(self, tiny_corpus):
        run = run_experiment(tiny_corpus, quick_config())
        report = run.reports[FusionMode.APPEARANCE_ONLY]
        assert report.overall_f1_weighted > 0.8

    def test_deterministic(self, tiny_corpus):
        a = run_experiment(tiny_corpus, quick_config())
        b = run_experiment(tiny_corpus, quick_config())
        for mode in a.reports:
            assert a.reports[mode] == b.reports[mode]

    def test_rendering(self, tiny_corpus):
        run = run_experiment(tiny_corpus, quick_config(table="cross_classroom"))
        text = format_experiment_tables([run])
        assert "cross_classroom" in text
        assert "On-Task" in text and "Off-Task" in text and "Overall" in text
        assert "Appr" in text and "Context+Appr" in text
        sink = io.StringIO()
        write_experiment_csv([run], sink)
        lines = sink.getvalue().splitlines()
        assert len(lines) == 1 + 2  # header + one row per mode

    def test_feature_cache_reuse(self, tiny_corpus):
        cache = FeatureCache(tiny_corpus)
        run_experiment(tiny_corpus, quick_config(), cache)
        matrix = cache.features(WindowConfig(), FeatureSpec())
        assert matrix.values.shape[0] == len(cache.windows(WindowConfig()))
