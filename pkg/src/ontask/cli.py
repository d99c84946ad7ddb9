"""Command-line entry point: synth, featurize, train, predict, evaluate,
experiment.

Every command writes a run manifest alongside its outputs, sends diagnostics
to stderr, and exits 0 on success, 1 on validation failures, 2 on I/O
failures.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
import time
from dataclasses import asdict, dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

import ontask
from ontask import evaluate as evaluate_mod
from ontask import features as features_mod
from ontask import fusion as fusion_mod
from ontask import pipeline, synth, windowing
from ontask.errors import OnTaskError, ValidationError
from ontask.evaluate import ExperimentConfig, FeatureCache, Selector
from ontask.features import FeatureMatrix, FeatureSpec
from ontask.forest import TrainConfig, train_forest
from ontask.fusion import FusionMode, TwoPhaseModel
from ontask.ingest import PlatformPatternSet, parse_platform_patterns
from ontask.windowing import LabelPolicy, Window, WindowConfig

_MODE_TOKENS = {
    "appearance": FusionMode.APPEARANCE_ONLY,
    "two-phase": FusionMode.CONTEXT_AND_APPEARANCE,
}


@dataclass
class RunManifest:
    """Reproducibility record written alongside every output artifact."""

    command: str
    argv: list[str]
    config_paths: list[str]
    inputs: list[str]
    outputs: list[str]
    seed: int | None
    tool_version: str
    started_utc: str
    wall_time_s: float


def _write_manifest(target: Path, manifest: RunManifest) -> None:
    path = target / "run_manifest.json" if target.is_dir() else target.with_name(
        target.name + ".manifest.json"
    )
    path.write_text(json.dumps(asdict(manifest), indent=2) + "\n", encoding="utf-8")


class _ManifestTimer:
    def __init__(self, command: str, args: argparse.Namespace) -> None:
        self.command = command
        self.argv = sys.argv[1:]
        self.started = time.perf_counter()
        self.started_utc = datetime.now(timezone.utc).isoformat()
        self.seed = getattr(args, "seed", None)
        self.config_paths: list[str] = []
        self.inputs: list[str] = []
        self.outputs: list[str] = []

    def finish(self, target: Path) -> None:
        manifest = RunManifest(
            command=self.command,
            argv=self.argv,
            config_paths=self.config_paths,
            inputs=self.inputs,
            outputs=self.outputs,
            seed=self.seed,
            tool_version=ontask.__version__,
            started_utc=self.started_utc,
            wall_time_s=time.perf_counter() - self.started,
        )
        _write_manifest(target, manifest)


def _window_config(args: argparse.Namespace) -> WindowConfig:
    return WindowConfig(
        window_ms=args.window_ms,
        hop_ms=args.hop_ms,
        label_policy=LabelPolicy(args.label_policy),
        coverage_threshold=args.gate_threshold,
    )


def _add_window_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--window-ms", type=int, default=8000)
    parser.add_argument("--hop-ms", type=int, default=4000)
    parser.add_argument("--gate-threshold", type=float, default=0.5)
    parser.add_argument(
        "--label-policy", choices=["majority", "strict"], default="majority"
    )


def _align_windows(
    matrix: FeatureMatrix, windows: list[Window]
) -> list[Window]:
    """Windows reordered to the feature matrix's refs; refs must match 1:1."""
    by_ref = {(w.session_id, w.index): w for w in windows}
    missing = [ref for ref in matrix.refs if ref not in by_ref]
    extra = [ref for ref in by_ref if ref not in set(matrix.refs)]
    if missing or extra:
        raise ValidationError(
            f"feature/window key mismatch: {len(missing)} refs missing from windows "
            f"(first: {missing[:3]}), {len(extra)} windows without features "
            f"(first: {extra[:3]})"
        )
    return [by_ref[ref] for ref in matrix.refs]


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args: argparse.Namespace) -> int:
    timer = _ManifestTimer("synth", args)
    if args.config:
        cfg = synth.config_from_json_obj(
            json.loads(Path(args.config).read_text("utf-8"))
        )
        timer.config_paths.append(args.config)
    else:
        cfg = synth.default_config()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = synth.generate_corpus(cfg)
    synth.write_corpus(corpus, out)
    timer.outputs.append(str(out))
    timer.seed = cfg.seed
    timer.finish(out)
    print(f"wrote {len(corpus.sessions)} sessions to {out}", file=sys.stderr)
    return 0


def cmd_featurize(args: argparse.Namespace) -> int:
    timer = _ManifestTimer("featurize", args)
    timer.inputs.append(args.corpus)
    corpus = pipeline.load_corpus(args.corpus)
    window_cfg = _window_config(args)
    spec = FeatureSpec()
    if args.config:
        spec = FeatureSpec.from_json_obj(
            json.loads(Path(args.config).read_text("utf-8"))
        )
        timer.config_paths.append(args.config)
    windows = pipeline.build_windows(corpus, window_cfg)
    matrix = pipeline.featurize(corpus, windows, spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "windows.csv", "w", encoding="utf-8") as fh:
        windowing.write_window_table(windows, fh)
    with open(out / "features.csv", "w", encoding="utf-8") as fh:
        features_mod.write_feature_matrix(matrix, fh)
    timer.outputs += [str(out / "windows.csv"), str(out / "features.csv")]
    timer.finish(out)
    print(f"featurized {len(windows)} windows from {len(corpus.sessions)} sessions", file=sys.stderr)
    return 0


def _read_matrix(path: str) -> FeatureMatrix:
    with open(path, encoding="utf-8") as fh:
        return features_mod.read_feature_matrix(fh)


def _read_windows(path: str) -> list[Window]:
    with open(path, encoding="utf-8") as fh:
        return windowing.read_window_table(fh)


def cmd_train(args: argparse.Namespace) -> int:
    timer = _ManifestTimer("train", args)
    timer.inputs += [args.features, args.windows]
    matrix = _read_matrix(args.features)
    windows = _align_windows(matrix, _read_windows(args.windows))
    mode = _MODE_TOKENS[args.mode]

    train_cfg = TrainConfig(seed=args.seed)
    if args.config:
        obj = json.loads(Path(args.config).read_text("utf-8"))
        obj.setdefault("seed", args.seed)
        train_cfg = TrainConfig.from_json_obj(
            {**TrainConfig(seed=args.seed).to_json_obj(), **obj}
        )
        timer.config_paths.append(args.config)

    gate = args.gate_threshold if mode is FusionMode.CONTEXT_AND_APPEARANCE else None
    dataset = pipeline.training_dataset(windows, matrix, gate_threshold=gate)
    model = train_forest(dataset, train_cfg)
    if model.single_class_warning:
        print("warning: training labels contain a single class", file=sys.stderr)

    patterns = PlatformPatternSet(patterns=())
    if args.patterns:
        with open(args.patterns, encoding="utf-8") as fh:
            patterns = parse_platform_patterns(fh)
        timer.inputs.append(args.patterns)
    two_phase = TwoPhaseModel(
        patterns=patterns,
        gate_threshold=args.gate_threshold,
        appearance=model,
        mode=mode,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fusion_mod.save_two_phase(two_phase, out)
    timer.outputs.append(str(out))
    timer.finish(out)
    print(
        f"trained {train_cfg.n_trees} trees on {dataset.n_rows} windows -> {out}",
        file=sys.stderr,
    )
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    timer = _ManifestTimer("predict", args)
    timer.inputs += [args.model, args.features, args.windows]
    model = fusion_mod.load_two_phase(args.model)
    matrix = _read_matrix(args.features)
    from ontask.forest import validate_feature_names

    validate_feature_names(model.appearance, matrix.names)
    windows = _align_windows(matrix, _read_windows(args.windows))
    vectors = [matrix.row(i) for i in range(len(windows))]
    coverages = [w.platform_coverage for w in windows]
    predictions = fusion_mod.predict_batch(model, vectors, coverages)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        fusion_mod.write_predictions(predictions, fh)
    timer.outputs.append(str(out))
    timer.finish(out)
    print(f"predicted {len(predictions)} windows -> {out}", file=sys.stderr)
    return 0


def _report_lines(report: evaluate_mod.EvalReport) -> list[str]:
    cm = report.confusion.counts
    return [
        "confusion matrix (rows = truth on_task/off_task, cols = prediction):",
        f"  {cm[0, 0]:>8d} {cm[0, 1]:>8d}",
        f"  {cm[1, 0]:>8d} {cm[1, 1]:>8d}",
        f"f1_on_task          {report.f1_on_task:.4f}",
        f"f1_off_task         {report.f1_off_task:.4f}",
        f"overall_f1_weighted {report.overall_f1_weighted:.4f}",
        f"overall_f1_macro    {report.overall_f1_macro:.4f}",
        f"accuracy            {report.accuracy:.4f}",
        f"chance_accuracy     {report.chance_accuracy:.4f}",
        f"kappa               {report.kappa:.4f}"
        + (" (degenerate)" if report.kappa_degenerate else ""),
        f"n_windows           {report.n_windows}",
        f"n_gate_predictions  {report.n_gate_predictions}",
    ]


_REPORT_FIELDS = (
    "f1_on_task",
    "f1_off_task",
    "overall_f1_weighted",
    "overall_f1_macro",
    "accuracy",
    "chance_accuracy",
    "kappa",
    "n_windows",
    "n_gate_predictions",
)


def cmd_evaluate(args: argparse.Namespace) -> int:
    timer = _ManifestTimer("evaluate", args)
    timer.inputs += [args.predictions, args.windows]
    with open(args.predictions, encoding="utf-8") as fh:
        predictions = fusion_mod.read_predictions(fh)
    windows = _read_windows(args.windows)

    window_refs = {(w.session_id, w.index) for w in windows}
    pred_refs = {p.window_ref for p in predictions}
    if window_refs != pred_refs:
        missing = sorted(pred_refs - window_refs)[:3]
        extra = sorted(window_refs - pred_refs)[:3]
        raise ValidationError(
            f"prediction/window key mismatch: {len(pred_refs - window_refs)} "
            f"predictions without windows (first: {missing}), "
            f"{len(window_refs - pred_refs)} windows without predictions "
            f"(first: {extra})"
        )
    truth = {(w.session_id, w.index): w.truth_label for w in windows}
    report = evaluate_mod.build_report(predictions, truth)
    print("\n".join(_report_lines(report)))

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        import csv as _csv

        with open(out / "report.csv", "w", encoding="utf-8") as fh:
            writer = _csv.writer(fh, lineterminator="\n")
            writer.writerow(["metric", "value"])
            for name in _REPORT_FIELDS:
                writer.writerow([name, repr(getattr(report, name))])
            writer.writerow(["kappa_degenerate", int(report.kappa_degenerate)])
        timer.outputs.append(str(out / "report.csv"))
        timer.finish(out)
    return 0


def default_experiment_configs(
    seed: int = 42,
    window_config: WindowConfig = WindowConfig(),
) -> list[ExperimentConfig]:
    """The default 3-cell study: cross-classroom (set1->set1, set1->set2 on
    math) and cross-platform (math->math, math->esl)."""
    common = dict(window_config=window_config, seed=seed)
    return [
        ExperimentConfig(
            name="set1_self",
            table="cross_classroom",
            train_selector=Selector.parse("classroom=c1,platform=math"),
            test_selector=Selector.parse("classroom=c1,platform=math"),
            allow_self_test=True,
            **common,
        ),
        ExperimentConfig(
            name="set1_to_set2",
            table="cross_classroom",
            train_selector=Selector.parse("classroom=c1,platform=math"),
            test_selector=Selector.parse("classroom=c2,platform=math"),
            **common,
        ),
        ExperimentConfig(
            name="math_self",
            table="cross_platform",
            train_selector=Selector.parse("platform=math"),
            test_selector=Selector.parse("platform=math"),
            allow_self_test=True,
            **common,
        ),
        ExperimentConfig(
            name="math_to_esl",
            table="cross_platform",
            train_selector=Selector.parse("platform=math"),
            test_selector=Selector.parse("platform=esl"),
            **common,
        ),
    ]


def parse_experiment_ini(text: str, fallback_seed: int = 42) -> list[ExperimentConfig]:
    """Experiment runs from INI text: one [run:NAME] section per run, with an
    optional [defaults] section."""
    parser = configparser.ConfigParser()
    parser.read_string(text)
    defaults = parser["defaults"] if parser.has_section("defaults") else {}

    def get(section, key: str, fallback: str | None = None) -> str | None:
        return section.get(key, defaults.get(key, fallback))

    configs: list[ExperimentConfig] = []
    for section_name in parser.sections():
        if not section_name.startswith("run:"):
            continue
        section = parser[section_name]
        train = get(section, "train")
        test = get(section, "test")
        if train is None or test is None:
            raise ValidationError(f"[{section_name}] needs train and test selectors")
        mode_tokens = [
            tok.strip()
            for tok in get(section, "modes", "appearance,two-phase").split(",")
            if tok.strip()
        ]
        try:
            modes = tuple(_MODE_TOKENS[tok] for tok in mode_tokens)
        except KeyError as exc:
            raise ValidationError(f"unknown mode {exc.args[0]!r} in [{section_name}]") from None
        window_cfg = WindowConfig(
            window_ms=int(get(section, "window_ms", "8000")),
            hop_ms=int(get(section, "hop_ms", "4000")),
            label_policy=LabelPolicy(get(section, "label_policy", "majority")),
            coverage_threshold=float(get(section, "gate_threshold", "0.5")),
        )
        train_cfg = TrainConfig(
            n_trees=int(get(section, "n_trees", "100")),
            max_depth=int(get(section, "max_depth", "12")),
            min_samples_leaf=int(get(section, "min_samples_leaf", "5")),
        )
        configs.append(
            ExperimentConfig(
                name=section_name[len("run:") :],
                table=get(section, "table", "experiments"),
                train_selector=Selector.parse(train),
                test_selector=Selector.parse(test),
                modes=modes,
                allow_self_test=(get(section, "allow_self_test", "false") or "false")
                .strip()
                .lower()
                in ("1", "true", "yes", "on"),
                train_config=train_cfg,
                window_config=window_cfg,
                seed=int(get(section, "seed", str(fallback_seed))),
            )
        )
    if not configs:
        raise ValidationError("experiment config defines no [run:*] sections")
    return configs


def cmd_experiment(args: argparse.Namespace) -> int:
    timer = _ManifestTimer("experiment", args)
    timer.inputs.append(args.corpus)
    corpus = pipeline.load_corpus(args.corpus)
    if args.config:
        configs = parse_experiment_ini(
            Path(args.config).read_text("utf-8"), fallback_seed=args.seed
        )
        timer.config_paths.append(args.config)
    else:
        configs = default_experiment_configs(seed=args.seed)

    cache = FeatureCache(corpus)
    runs = [evaluate_mod.run_experiment(corpus, cfg, cache) for cfg in configs]
    tables = evaluate_mod.format_experiment_tables(runs)
    print(tables, end="")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(tables, encoding="utf-8")
    with open(out / "report.csv", "w", encoding="utf-8") as fh:
        evaluate_mod.write_experiment_csv(runs, fh)
    timer.outputs += [str(out / "report.txt"), str(out / "report.csv")]
    timer.finish(out)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ontask",
        description="Two-phase behavioral engagement detection toolkit",
    )
    parser.add_argument("--version", action="version", version=ontask.__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--config", help="SynthConfig JSON path")
    p.add_argument("--out", required=True, help="corpus output directory")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("featurize", help="windows + feature matrix from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="FeatureSpec JSON path")
    _add_window_flags(p)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train a model from features + windows")
    p.add_argument("--features", required=True)
    p.add_argument("--windows", required=True)
    p.add_argument("--out", required=True, help="model file path")
    p.add_argument("--mode", choices=sorted(_MODE_TOKENS), default="two-phase")
    p.add_argument("--config", help="TrainConfig JSON path")
    p.add_argument("--patterns", help="platform pattern file to embed in the model")
    p.add_argument("--gate-threshold", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict windows with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--windows", required=True)
    p.add_argument("--out", required=True, help="predictions CSV path")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against window truth")
    p.add_argument("--predictions", required=True)
    p.add_argument("--windows", required=True)
    p.add_argument("--out", help="directory for report.csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="run train/test experiment tables")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="experiment INI path (default: 3-cell study)")
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OnTaskError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
