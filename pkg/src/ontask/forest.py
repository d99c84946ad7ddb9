"""From-scratch random forest: CART trees, Gini impurity, bootstrap bagging.

Training is fully deterministic given (dataset, config): tree i draws its
bootstrap sample and per-split feature subsets from an independent RNG
substream, so growing more trees never reshuffles earlier ones.
"""

from __future__ import annotations

import hashlib

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Sequence

import numpy as np

from ontask import kernels
from ontask.errors import ModelFormatError, SchemaMismatchError, ValidationError

CLASS_NAMES = ("on_task", "off_task")
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Dataset:
    """Training data: rows are windows, labels 0 = OnTask, 1 = OffTask."""

    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...]
    group_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValidationError("features must be a non-empty 2-D matrix")
        if not np.isfinite(x).all():
            raise ValidationError("features must be finite (no NaN/inf)")
        if y.shape != (x.shape[0],):
            raise ValidationError("labels must align with feature rows")
        if not np.isin(y, (0, 1)).all():
            raise ValidationError("labels must be 0 (OnTask) or 1 (OffTask)")
        if len(self.feature_names) != x.shape[1]:
            raise ValidationError("feature_names must match feature columns")
        if len(self.group_ids) != x.shape[0]:
            raise ValidationError("group_ids must align with feature rows")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class TrainConfig:
    n_trees: int = 100
    max_depth: int = 12
    min_samples_leaf: int = 5
    mtry: int | str = "sqrt"
    bootstrap: bool = True
    seed: int = 0
    class_weighting: str = "balanced"

    def __post_init__(self) -> None:
        if self.n_trees < 1 or self.max_depth < 1 or self.min_samples_leaf < 1:
            raise ValidationError("n_trees, max_depth, min_samples_leaf must be >= 1")
        if isinstance(self.mtry, str):
            if self.mtry != "sqrt":
                raise ValidationError(f"mtry must be an integer or 'sqrt', got {self.mtry!r}")
        elif self.mtry < 1:
            raise ValidationError("integer mtry must be >= 1")
        if self.class_weighting not in ("none", "balanced"):
            raise ValidationError("class_weighting must be 'none' or 'balanced'")

    def resolve_mtry(self, n_features: int) -> int:
        if self.mtry == "sqrt":
            return max(1, int(math.sqrt(n_features)))
        if self.mtry > n_features:
            raise ValidationError(f"mtry {self.mtry} exceeds feature count {n_features}")
        return int(self.mtry)

    def to_json_obj(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "min_samples_leaf": self.min_samples_leaf,
            "mtry": self.mtry,
            "bootstrap": self.bootstrap,
            "seed": self.seed,
            "class_weighting": self.class_weighting,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "TrainConfig":
        return cls(
            n_trees=int(obj["n_trees"]),
            max_depth=int(obj["max_depth"]),
            min_samples_leaf=int(obj["min_samples_leaf"]),
            mtry=obj["mtry"] if obj["mtry"] == "sqrt" else int(obj["mtry"]),
            bootstrap=bool(obj["bootstrap"]),
            seed=int(obj["seed"]),
            class_weighting=str(obj["class_weighting"]),
        )


@dataclass
class TreeNode:
    """Internal node (feature_index/threshold/left/right) or leaf (class_counts).

    Internal nodes route x[feature_index] <= threshold to the left child.
    """

    feature_index: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    class_counts: tuple[float, float] | None = None

    @property
    def is_leaf(self) -> bool:
        return self.class_counts is not None


@dataclass
class _FlatTree:
    """Array form of one tree for vectorized prediction."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    dist: np.ndarray


@dataclass
class RandomForestModel:
    trees: list[TreeNode]
    config: TrainConfig
    feature_names: tuple[str, ...]
    schema_hash: str
    class_names: tuple[str, str] = CLASS_NAMES
    format_version: int = MODEL_FORMAT_VERSION
    single_class_warning: bool = False
    _flat: list[_FlatTree] | None = field(default=None, repr=False, compare=False)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)


def schema_hash_of(feature_names: Sequence[str]) -> str:
    digest = hashlib.sha256("\n".join(feature_names).encode("utf-8")).hexdigest()
    return f"sha256:{digest}"


# ---------------------------------------------------------------------------
# training


def gini(class_counts: Sequence[float] | np.ndarray) -> float:
    """Gini impurity 1 - sum(p_k^2); an empty node has impurity 0."""
    counts = np.asarray(class_counts, dtype=np.float64)
    if (counts < 0).any():
        raise ValidationError("class counts must be non-negative")
    total = counts.sum()
    if total == 0.0:
        return 0.0
    p = counts / total
    return float(1.0 - np.sum(p * p))


def best_split(
    features: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray,
    feature_subset: np.ndarray,
    min_leaf_weight: float,
) -> tuple[int, float, float] | None:
    """Best (feature_index, threshold, impurity_decrease) within the subset.

    Exhaustive scan over midpoints between consecutive distinct sorted
    values; ties break to the lower feature index then lower threshold.
    Returns None when the node is pure or no threshold yields children of
    weight >= min_leaf_weight. Zero-decrease splits of impure nodes are
    allowed so structure like XOR can still be separated deeper down.
    """
    subset = np.asarray(feature_subset, dtype=np.int64)
    sub = np.ascontiguousarray(features[:, subset])
    found = kernels.best_split_scan(sub, labels, weights, min_leaf_weight)
    if found is None:
        return None
    local, threshold, decrease = found
    return int(subset[local]), threshold, decrease


def _leaf(counts: tuple[float, float]) -> TreeNode:
    return TreeNode(class_counts=counts)


def _weighted_counts(labels: np.ndarray, weights: np.ndarray) -> tuple[float, float]:
    return (
        float(weights[labels == 0].sum()),
        float(weights[labels == 1].sum()),
    )


def grow_tree(
    dataset: Dataset,
    row_indices: np.ndarray,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> TreeNode:
    """Recursive CART on the given rows (duplicates act as weight).

    Stops on max_depth, purity, or the min_samples_leaf weight floor; the
    feature subset is freshly sampled from rng at every split.
    """
    x = dataset.features
    y = dataset.labels
    class_w = _class_weights(dataset, cfg)
    w = class_w[y]
    mtry = cfg.resolve_mtry(dataset.n_features)
    min_leaf_w = float(cfg.min_samples_leaf)

    def build(rows: np.ndarray, depth: int) -> TreeNode:
        labels = y[rows]
        weights = w[rows]
        counts = _weighted_counts(labels, weights)
        total = counts[0] + counts[1]
        if (
            depth >= cfg.max_depth
            or total < 2.0 * min_leaf_w
            or counts[0] == 0.0
            or counts[1] == 0.0
        ):
            return _leaf(counts)
        subset = np.sort(rng.choice(dataset.n_features, size=mtry, replace=False))
        found = best_split(x[rows], labels, weights, subset, min_leaf_w)
        if found is None:
            return _leaf(counts)
        feature_index, threshold, _ = found
        go_left = x[rows, feature_index] <= threshold
        node = TreeNode(feature_index=feature_index, threshold=threshold)
        node.left = build(rows[go_left], depth + 1)
        node.right = build(rows[~go_left], depth + 1)
        return node

    return build(np.asarray(row_indices, dtype=np.int64), 0)


def _class_weights(dataset: Dataset, cfg: TrainConfig) -> np.ndarray:
    """Per-class sample weight; balanced uses n / (2 * n_k) on the full data."""
    if cfg.class_weighting == "none":
        return np.ones(2, dtype=np.float64)
    n = dataset.n_rows
    out = np.ones(2, dtype=np.float64)
    for k in (0, 1):
        n_k = int((dataset.labels == k).sum())
        if n_k > 0:
            out[k] = n / (2.0 * n_k)
    return out


def train_forest(dataset: Dataset, cfg: TrainConfig) -> RandomForestModel:
    """Grow cfg.n_trees CART trees on bootstrap resamples.

    Tree i uses SeedSequence substream i of cfg.seed, so (dataset, cfg) fully
    determines the model. A single-class dataset trains a constant predictor
    and sets single_class_warning.
    """
    cfg.resolve_mtry(dataset.n_features)
    present = np.unique(dataset.labels)
    single_class = len(present) < 2

    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.n_trees)
    trees: list[TreeNode] = []
    n = dataset.n_rows
    for i in range(cfg.n_trees):
        rng = np.random.default_rng(streams[i])
        if cfg.bootstrap:
            rows = rng.integers(0, n, size=n)
        else:
            rows = np.arange(n, dtype=np.int64)
        trees.append(grow_tree(dataset, rows, cfg, rng))
    return RandomForestModel(
        trees=trees,
        config=cfg,
        feature_names=tuple(dataset.feature_names),
        schema_hash=schema_hash_of(dataset.feature_names),
        single_class_warning=single_class,
    )


# ---------------------------------------------------------------------------
# prediction


def _flatten(root: TreeNode) -> _FlatTree:
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    dist: list[tuple[float, float]] = []

    def add(node: TreeNode) -> int:
        slot = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        if node.is_leaf:
            c0, c1 = node.class_counts
            total = c0 + c1
            if total <= 0.0:
                raise ValidationError("leaf with empty class counts")
            dist.append((c0 / total, c1 / total))
        else:
            dist.append((0.0, 0.0))
            feature[slot] = node.feature_index
            threshold[slot] = node.threshold
            left[slot] = add(node.left)
            right[slot] = add(node.right)
        return slot

    add(root)
    return _FlatTree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        dist=np.asarray(dist, dtype=np.float64),
    )


def _flat_trees(model: RandomForestModel) -> list[_FlatTree]:
    if model._flat is None:
        model._flat = [_flatten(t) for t in model.trees]
    return model._flat


def predict_proba_batch(model: RandomForestModel, x: np.ndarray) -> np.ndarray:
    """Per-class probability matrix (n, 2): the average of per-tree leaf
    distributions."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.n_features:
        raise SchemaMismatchError(
            f"model expects {model.n_features} features, got "
            f"{x.shape[1] if x.ndim == 2 else 'non-matrix input'}"
        )
    n = x.shape[0]
    acc = np.zeros((n, 2), dtype=np.float64)
    rows = np.arange(n)
    for tree in _flat_trees(model):
        node = np.zeros(n, dtype=np.int64)
        while True:
            feat = tree.feature[node]
            active = feat >= 0
            if not active.any():
                break
            sub = rows[active]
            go_left = x[sub, feat[active]] <= tree.threshold[node[active]]
            node[sub] = np.where(
                go_left, tree.left[node[active]], tree.right[node[active]]
            )
        acc += tree.dist[node]
    return acc / len(model.trees)


def predict_proba(model: RandomForestModel, x: Sequence[float] | np.ndarray) -> np.ndarray:
    """Per-class probabilities for one feature vector."""
    vec = np.asarray(x, dtype=np.float64)
    if vec.ndim != 1 or vec.shape[0] != model.n_features:
        raise SchemaMismatchError(
            f"model expects {model.n_features} features, got "
            f"{vec.shape[0] if vec.ndim == 1 else 'non-vector input'}"
        )
    return predict_proba_batch(model, vec[None, :])[0]


def predict_batch(model: RandomForestModel, x: np.ndarray) -> np.ndarray:
    """Class ids, ties going to OffTask (class 1)."""
    proba = predict_proba_batch(model, x)
    return (proba[:, 1] >= proba[:, 0]).astype(np.int64)


def predict(model: RandomForestModel, x: Sequence[float] | np.ndarray) -> int:
    proba = predict_proba(model, x)
    return 1 if proba[1] >= proba[0] else 0


def validate_feature_names(model: RandomForestModel, names: Sequence[str]) -> None:
    """Reject features whose names don't hash to the training schema."""
    if schema_hash_of(names) != model.schema_hash:
        raise SchemaMismatchError(
            "feature names do not match the schema the model was trained on"
        )


# ---------------------------------------------------------------------------
# serialization


def _node_to_obj(node: TreeNode) -> dict:
    if node.is_leaf:
        c0, c1 = node.class_counts
        return {"c": [c0, c1]}
    return {
        "f": node.feature_index,
        "t": node.threshold,
        "l": _node_to_obj(node.left),
        "r": _node_to_obj(node.right),
    }


def _node_from_obj(obj: dict) -> TreeNode:
    if "c" in obj:
        c0, c1 = obj["c"]
        return TreeNode(class_counts=(float(c0), float(c1)))
    return TreeNode(
        feature_index=int(obj["f"]),
        threshold=float(obj["t"]),
        left=_node_from_obj(obj["l"]),
        right=_node_from_obj(obj["r"]),
    )


def model_to_json_obj(model: RandomForestModel) -> dict:
    return {
        "format_version": model.format_version,
        "class_names": list(model.class_names),
        "feature_names": list(model.feature_names),
        "schema_hash": model.schema_hash,
        "config": model.config.to_json_obj(),
        "single_class_warning": model.single_class_warning,
        "trees": [_node_to_obj(t) for t in model.trees],
    }


def model_from_json_obj(obj: dict) -> RandomForestModel:
    try:
        version = obj["format_version"]
        if version != MODEL_FORMAT_VERSION:
            raise ModelFormatError(f"unsupported model format_version {version!r}")
        model = RandomForestModel(
            trees=[_node_from_obj(t) for t in obj["trees"]],
            config=TrainConfig.from_json_obj(obj["config"]),
            feature_names=tuple(obj["feature_names"]),
            schema_hash=str(obj["schema_hash"]),
            class_names=tuple(obj["class_names"]),
            format_version=int(version),
            single_class_warning=bool(obj["single_class_warning"]),
        )
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model file: {exc}") from None
    if len(model.trees) != model.config.n_trees:
        raise ModelFormatError("tree count does not match the stored config")
    if model.schema_hash != schema_hash_of(model.feature_names):
        raise ModelFormatError("schema_hash does not match the stored feature names")
    return model


def model_to_bytes(model: RandomForestModel) -> bytes:
    """Canonical serialization: fixed field order, compact separators, so
    identical models produce identical bytes."""
    return (
        json.dumps(model_to_json_obj(model), separators=(",", ":")) + "\n"
    ).encode("utf-8")


def save_model(model: RandomForestModel, sink: str | Path | IO[bytes]) -> None:
    data = model_to_bytes(model)
    if isinstance(sink, (str, Path)):
        Path(sink).write_bytes(data)
    else:
        sink.write(data)


def load_model(source: str | Path | IO[bytes]) -> RandomForestModel:
    if isinstance(source, (str, Path)):
        data = Path(source).read_bytes()
    else:
        data = source.read()
    try:
        obj = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"not a model file: {exc}") from None
    if not isinstance(obj, dict):
        raise ModelFormatError("not a model file: expected a JSON object")
    return model_from_json_obj(obj)
