import io

import numpy as np
import pytest

from ontask.errors import ModelFormatError, ValidationError
from ontask.features import FeatureVector
from ontask.forest import Dataset, TrainConfig, predict_proba, train_forest
from ontask.fusion import (
    FusionMode,
    Prediction,
    PredictionSource,
    TwoPhaseModel,
    load_two_phase,
    predict_batch,
    predict_two_phase,
    read_predictions,
    save_two_phase,
    two_phase_to_bytes,
    write_predictions,
)
from ontask.ingest import Label, PlatformPatternSet

PATTERNS = PlatformPatternSet(patterns=(("host_suffix", "p.x"),))
N_FEATURES = 6
NAMES = tuple(f"f{i}" for i in range(N_FEATURES))


def trained_forest(seed=0, n=300):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=n)
    x = rng.standard_normal((n, N_FEATURES)) + np.where(labels == 1, 1.0, -1.0)[:, None]
    ds = Dataset(x, labels, NAMES, tuple("s" for _ in range(n)))
    return train_forest(ds, TrainConfig(n_trees=20, seed=seed))


def two_phase(mode=FusionMode.CONTEXT_AND_APPEARANCE, theta=0.5, seed=0):
    return TwoPhaseModel(
        patterns=PATTERNS,
        gate_threshold=theta,
        appearance=trained_forest(seed),
        mode=mode,
    )


def vector(values, ref=("s1", 0)):
    return FeatureVector(names=NAMES, values=np.asarray(values, float), window_ref=ref)


class TestPredictTwoPhase:
    def test_zero_coverage_gates_to_off_task(self):
        model = two_phase()
        pred = predict_two_phase(model, vector(np.full(N_FEATURES, -5.0)), 0.0)
        assert pred.label is Label.OFF_TASK
        assert pred.source is PredictionSource.CONTEXT_GATE
        assert pred.proba_offtask == 1.0

    def test_full_coverage_passes_to_appearance(self):
        model = two_phase()
        on_looking = np.full(N_FEATURES, -2.0)
        pred = predict_two_phase(model, vector(on_looking), 1.0)
        assert pred.source is PredictionSource.APPEARANCE_MODEL
        assert pred.label is Label.ON_TASK

    def test_coverage_exactly_at_threshold_routes_to_phase_two(self):
        model = two_phase(theta=0.5)
        pred = predict_two_phase(model, vector(np.full(N_FEATURES, -2.0)), 0.5)
        assert pred.source is PredictionSource.APPEARANCE_MODEL

    def test_appearance_only_ignores_coverage(self):
        model = two_phase(mode=FusionMode.APPEARANCE_ONLY)
        pred = predict_two_phase(model, vector(np.full(N_FEATURES, -2.0)), 0.0)
        assert pred.source is PredictionSource.APPEARANCE_MODEL
        assert pred.label is Label.ON_TASK

    def test_gate_dominance_fuzz(self):
        model = two_phase()
        rng = np.random.default_rng(123)
        for _ in range(1000):
            coverage = float(rng.uniform(0.0, np.nextafter(0.5, 0.0)))
            pred = predict_two_phase(
                model, vector(rng.standard_normal(N_FEATURES) * 10), coverage
            )
            assert pred.label is Label.OFF_TASK
            assert pred.source is PredictionSource.CONTEXT_GATE
            assert pred.proba_offtask == 1.0

    def test_appearance_only_matches_forest_bit_for_bit(self):
        model = two_phase(mode=FusionMode.APPEARANCE_ONLY)
        rng = np.random.default_rng(7)
        for _ in range(50):
            values = rng.standard_normal(N_FEATURES)
            pred = predict_two_phase(model, vector(values), 0.0)
            assert pred.proba_offtask == predict_proba(model.appearance, values)[1]


class TestPredictBatch:
    def test_empty_input(self):
        assert predict_batch(two_phase(), [], []) == []

    def test_mismatched_lengths_rejected(self):
        with pytest.raises(ValidationError):
            predict_batch(two_phase(), [vector(np.zeros(N_FEATURES))], [])

    def test_matches_elementwise_and_order(self):
        model = two_phase()
        rng = np.random.default_rng(5)
        vectors = [
            vector(rng.standard_normal(N_FEATURES), ref=("s1", i)) for i in range(40)
        ]
        coverages = [float(rng.uniform(0, 1)) for _ in range(40)]
        batch = predict_batch(model, vectors, coverages)
        single = [predict_two_phase(model, v, c) for v, c in zip(vectors, coverages)]
        assert batch == single

    def test_permuted_input_gives_permuted_output(self):
        model = two_phase()
        rng = np.random.default_rng(6)
        vectors = [
            vector(rng.standard_normal(N_FEATURES), ref=("s1", i)) for i in range(20)
        ]
        coverages = [float(rng.uniform(0, 1)) for _ in range(20)]
        perm = rng.permutation(20)
        base = predict_batch(model, vectors, coverages)
        shuffled = predict_batch(
            model, [vectors[i] for i in perm], [coverages[i] for i in perm]
        )
        assert shuffled == [base[i] for i in perm]

    def test_mixed_batch_sources(self):
        model = two_phase()
        vectors = [vector(np.zeros(N_FEATURES), ref=("s1", i)) for i in range(2)]
        preds = predict_batch(model, vectors, [0.0, 1.0])
        assert preds[0].source is PredictionSource.CONTEXT_GATE
        assert preds[1].source is PredictionSource.APPEARANCE_MODEL


def test_monotone_agreement_under_gating():
    """If every gated window is truly Off-Task, switching appearance-only ->
    two-phase cannot lose Off-Task true positives or add false positives."""
    appearance = two_phase(mode=FusionMode.APPEARANCE_ONLY)
    gated = TwoPhaseModel(
        patterns=PATTERNS,
        gate_threshold=0.5,
        appearance=appearance.appearance,
        mode=FusionMode.CONTEXT_AND_APPEARANCE,
    )
    rng = np.random.default_rng(11)
    vectors, coverages, truths = [], [], []
    for i in range(400):
        coverage = float(rng.uniform(0, 1))
        if coverage < 0.5:
            truth = Label.OFF_TASK
        else:
            truth = Label.ON_TASK if rng.random() < 0.6 else Label.OFF_TASK
        vectors.append(vector(rng.standard_normal(N_FEATURES) * 2, ref=("s1", i)))
        coverages.append(coverage)
        truths.append(truth)

    def off_task_tp_fp(preds):
        tp = sum(
            1
            for p, t in zip(preds, truths)
            if p.label is Label.OFF_TASK and t is Label.OFF_TASK
        )
        fp = sum(
            1
            for p, t in zip(preds, truths)
            if p.label is Label.OFF_TASK and t is Label.ON_TASK
        )
        return tp, fp

    tp_a, fp_a = off_task_tp_fp(predict_batch(appearance, vectors, coverages))
    tp_g, fp_g = off_task_tp_fp(predict_batch(gated, vectors, coverages))
    assert tp_g >= tp_a
    assert fp_g <= fp_a


class TestModelFile:
    def test_round_trip(self):
        model = two_phase()
        sink = io.BytesIO()
        save_two_phase(model, sink)
        loaded = load_two_phase(io.BytesIO(sink.getvalue()))
        assert loaded.mode is model.mode
        assert loaded.gate_threshold == model.gate_threshold
        assert loaded.patterns == model.patterns
        assert two_phase_to_bytes(loaded) == two_phase_to_bytes(model)

    def test_rejects_other_files(self):
        with pytest.raises(ModelFormatError):
            load_two_phase(io.BytesIO(b'{"kind": "something_else"}'))


def test_predictions_csv_round_trip():
    preds = [
        Prediction(("s1", 0), Label.OFF_TASK, PredictionSource.CONTEXT_GATE, 1.0),
        Prediction(("s1", 1), Label.ON_TASK, PredictionSource.APPEARANCE_MODEL, 0.25),
    ]
    sink = io.StringIO()
    write_predictions(preds, sink)
    assert read_predictions(io.StringIO(sink.getvalue())) == preds
