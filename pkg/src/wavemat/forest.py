"""Random-forest classifier built from first principles.

Bootstrap-trained binary decision trees with Gini splits over midpoint
thresholds, per-node feature subsampling, and consensus prediction by
summing leaf vote counts across trees. Training and prediction are fully
deterministic given the seed: impurity ties break toward the widest split
margin (the value gap straddling the threshold), then the lowest feature
index, then the smallest threshold; vote ties break toward the lowest
class id. Margin-first tie-breaking keeps splits away from pure-noise
bins that merely shadow an informative feature's separation.

The forest also records how often each feature index is chosen for
splitting, which is the importance measure reported downstream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Dataset, MaterialClass, Waveform
from .rng import derive_seed, generator

FOREST_FORMAT = "wavemat-forest"
FOREST_VERSION = 1


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int = 50
    features_per_node: int = 16  # floor(sqrt(256)); clamped to the feature count at fit time
    min_samples_leaf: int = 1
    min_split_margin: float = 0.0  # noise-floor gate: thresholds need a value gap this wide
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.features_per_node < 1:
            raise ValueError("features_per_node must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.min_split_margin < 0.0:
            raise ValueError("min_split_margin must be >= 0")


@dataclass
class TreeNode:
    """Internal node (feature_index >= 0) or leaf (class_votes set)."""

    feature_index: int = -1
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    class_votes: np.ndarray | None = None

    @property
    def is_leaf(self) -> bool:
        return self.class_votes is not None


@dataclass
class Forest:
    trees: list[TreeNode]
    class_table: tuple[MaterialClass, ...]
    params: ForestParams
    split_counts: np.ndarray  # per-feature split frequency across all trees
    n_features: int

    def n_internal_nodes(self) -> int:
        return int(self.split_counts.sum())


def _best_threshold(values: np.ndarray, labels: np.ndarray, n_classes: int, min_leaf: int, min_margin: float):
    """Best midpoint threshold for one feature.

    Returns (weighted child Gini, split margin, threshold) or None when no
    valid split exists. A threshold is valid only if the value gap it sits
    in exceeds ``min_margin`` (the noise-floor gate). Among equal-impurity
    positions the widest value gap wins, then the smallest threshold; the
    margin also referees impurity ties across features, so noise bins
    cannot hijack splits that an informative bin resolves with a wide gap.
    """
    n = values.shape[0]
    order = np.argsort(values, kind="stable")
    sv = values[order]
    sy = labels[order]

    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), sy] = 1.0
    left_counts = np.cumsum(onehot, axis=0)
    total = left_counts[-1]

    sizes = np.arange(1, n, dtype=np.float64)  # samples in the left child
    gaps = sv[1:] - sv[:-1]
    valid = (gaps > 0.0) & (gaps >= min_margin) & (sizes >= min_leaf) & (sizes <= n - min_leaf)
    if not valid.any():
        return None
    lc = left_counts[:-1]
    rc = total[None, :] - lc
    with np.errstate(divide="ignore", invalid="ignore"):
        left_term = sizes - (lc**2).sum(axis=1) / sizes
        right_term = (n - sizes) - (rc**2).sum(axis=1) / (n - sizes)
    score = np.where(valid, (left_term + right_term) / n, np.inf)
    best_score = score.min()
    tied = np.flatnonzero(score == best_score)
    best = tied[int(np.argmax(gaps[tied]))]  # first maximum = smallest threshold
    return float(best_score), float(gaps[best]), float(0.5 * (sv[best] + sv[best + 1]))


def _grow(
    X: np.ndarray,
    y: np.ndarray,
    idx: np.ndarray,
    depth: int,
    params: ForestParams,
    n_classes: int,
    n_sampled: int,
    rng: np.random.Generator,
    split_counts: np.ndarray,
) -> TreeNode:
    counts = np.bincount(y[idx], minlength=n_classes)
    if (
        depth >= params.max_depth
        or counts.max() == idx.shape[0]
        or idx.shape[0] < 2 * params.min_samples_leaf
    ):
        return TreeNode(class_votes=counts)

    features = np.sort(rng.choice(X.shape[1], size=n_sampled, replace=False))
    best_score = np.inf
    best_margin = -np.inf
    best_feature = -1
    best_threshold = 0.0
    for f in features:
        result = _best_threshold(X[idx, f], y[idx], n_classes, params.min_samples_leaf, params.min_split_margin)
        if result is None:
            continue
        score, margin, threshold = result
        # impurity first, then widest margin; remaining ties go to the
        # earlier (lower) feature index via the scan order
        if score < best_score or (score == best_score and margin > best_margin):
            best_score, best_margin, best_feature, best_threshold = score, margin, int(f), threshold
    if best_feature < 0:
        return TreeNode(class_votes=counts)

    split_counts[best_feature] += 1
    mask = X[idx, best_feature] <= best_threshold
    left = _grow(X, y, idx[mask], depth + 1, params, n_classes, n_sampled, rng, split_counts)
    right = _grow(X, y, idx[~mask], depth + 1, params, n_classes, n_sampled, rng, split_counts)
    return TreeNode(feature_index=best_feature, threshold=best_threshold, left=left, right=right)


def fit_forest(
    X: np.ndarray,
    y: np.ndarray,
    class_table: Sequence[MaterialClass],
    params: ForestParams,
) -> Forest:
    """Train on a plain (n, d) feature matrix with integer labels."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError(f"feature matrix {X.shape} does not match {y.shape[0]} labels")
    if X.shape[0] == 0:
        raise ValueError("cannot train a forest on an empty dataset")
    n_classes = len(class_table)
    present = np.unique(y)
    if present.size < 2:
        raise ValueError("training data holds a single class; nothing to split")
    if present.min() < 0 or present.max() >= n_classes:
        raise ValueError("labels outside the class table")

    n, d = X.shape
    n_sampled = min(params.features_per_node, d)
    split_counts = np.zeros(d, dtype=np.int64)
    trees = []
    for t in range(params.n_trees):
        rng = generator(derive_seed(params.seed, "tree", t))
        bootstrap = rng.integers(0, n, size=n)
        trees.append(_grow(X, y, bootstrap, 0, params, n_classes, n_sampled, rng, split_counts))
    return Forest(trees, tuple(class_table), params, split_counts, d)


def train_forest(train: Dataset, params: ForestParams) -> Forest:
    """Train on a waveform dataset (raw amplitudes; trees are monotone
    invariant, so no normalization is applied)."""
    if len(train) == 0:
        raise ValueError("cannot train a forest on an empty dataset")
    return fit_forest(train.features(), train.labels(), train.class_table, params)


def _votes_for(tree: TreeNode, x: np.ndarray) -> np.ndarray:
    node = tree
    while not node.is_leaf:
        node = node.left if x[node.feature_index] <= node.threshold else node.right
    return node.class_votes


def predict_votes(forest: Forest, x: np.ndarray) -> np.ndarray:
    """Summed leaf vote counts across all trees for one feature vector."""
    x = np.asarray(x, dtype=np.float64)
    votes = np.zeros(len(forest.class_table), dtype=np.int64)
    for tree in forest.trees:
        votes += _votes_for(tree, x)
    return votes


def predict_forest(forest: Forest, w: "Waveform | np.ndarray") -> MaterialClass:
    """Consensus prediction; vote ties break toward the lowest class id."""
    x = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    return forest.class_table[int(np.argmax(predict_votes(forest, x)))]


def predict_many(forest: Forest, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return np.array([int(np.argmax(predict_votes(forest, row))) for row in X], dtype=np.int64)


def feature_importance(forest: Forest) -> np.ndarray:
    """Split frequencies normalized to sum to one."""
    total = forest.split_counts.sum()
    if total == 0:
        raise ValueError("forest has no internal nodes; importance undefined")
    return forest.split_counts.astype(np.float64) / float(total)


def tree_depth(node: TreeNode) -> int:
    if node.is_leaf:
        return 0
    return 1 + max(tree_depth(node.left), tree_depth(node.right))


def _node_to_dict(node: TreeNode) -> dict:
    if node.is_leaf:
        return {"v": [int(c) for c in node.class_votes]}
    return {
        "f": node.feature_index,
        "t": node.threshold,
        "l": _node_to_dict(node.left),
        "r": _node_to_dict(node.right),
    }


def _node_from_dict(d: dict) -> TreeNode:
    if "v" in d:
        return TreeNode(class_votes=np.array(d["v"], dtype=np.int64))
    return TreeNode(
        feature_index=int(d["f"]),
        threshold=float(d["t"]),
        left=_node_from_dict(d["l"]),
        right=_node_from_dict(d["r"]),
    )


def save_forest(forest: Forest, path: str | Path) -> None:
    """Write a versioned JSON checkpoint with exact float round-trip."""
    payload = {
        "format": FOREST_FORMAT,
        "version": FOREST_VERSION,
        "params": {
            "n_trees": forest.params.n_trees,
            "max_depth": forest.params.max_depth,
            "features_per_node": forest.params.features_per_node,
            "min_samples_leaf": forest.params.min_samples_leaf,
            "min_split_margin": forest.params.min_split_margin,
            "seed": forest.params.seed,
        },
        "classes": [[c.id, c.name] for c in forest.class_table],
        "n_features": forest.n_features,
        "split_counts": [int(c) for c in forest.split_counts],
        "trees": [_node_to_dict(t) for t in forest.trees],
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8", newline="\n")


def load_forest(path: str | Path) -> Forest:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != FOREST_FORMAT or payload.get("version") != FOREST_VERSION:
        raise ValueError(f"{path}: not a version-{FOREST_VERSION} {FOREST_FORMAT} checkpoint")
    params = ForestParams(**payload["params"])
    class_table = tuple(MaterialClass(int(i), str(n)) for i, n in payload["classes"])
    return Forest(
        trees=[_node_from_dict(t) for t in payload["trees"]],
        class_table=class_table,
        params=params,
        split_counts=np.array(payload["split_counts"], dtype=np.int64),
        n_features=int(payload["n_features"]),
    )
