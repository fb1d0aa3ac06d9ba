"""From-scratch CART trees, random forests and gradient boosting.

Splits maximize variance reduction (regression) or Gini decrease
(classification) over midpoints between consecutive distinct feature values;
ties resolve to the lowest feature index, then the lowest threshold, so runs
are reproducible bit for bit on a given kernel backend. Forest trees draw
per-tree seeds from the root seed; boosting rounds are strictly sequential.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DegenerateTargets, TooFewSamples, WidthMismatch


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    ids: list[str]

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.y = np.ascontiguousarray(self.y, dtype=np.float64)
        if self.X.ndim != 2 or self.y.ndim != 1 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X must be N x D and y length N")
        if len(self.ids) != self.X.shape[0]:
            raise ValueError("ids length mismatch")
        if not np.isfinite(self.X).all() or not np.isfinite(self.y).all():
            raise ValueError("dataset contains non-finite entries")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def width(self) -> int:
        return self.X.shape[1]

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], [self.ids[i] for i in idx])


def train_test_split(ds: Dataset, ratio: float = 0.7, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Deterministic shuffled split; train size is floor(N * ratio), which
    gives the 206/89 split for N=295 at 0.7."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be in (0, 1)")
    if ds.n < 2:
        raise TooFewSamples(f"need at least 2 samples, got {ds.n}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    perm = rng.permutation(ds.n)
    n_train = int(math.floor(ds.n * ratio + 1e-9))
    n_train = min(max(n_train, 1), ds.n - 1)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return ds.subset(train_idx), ds.subset(test_idx)


# ---------------------------------------------------------------------------
# CART
# ---------------------------------------------------------------------------


@dataclass
class TreeParams:
    max_depth: int | None = None
    min_samples_split: int = 2
    min_samples_leaf: int = 1


@dataclass
class Node:
    feature: int = -1          # -1 marks a leaf
    threshold: float = 0.0
    left: int = -1
    right: int = -1
    value: float = 0.0         # leaf mean (regression) or class-1 fraction
    n_samples: int = 0


@dataclass
class DecisionTree:
    nodes: list[Node]
    task: str  # regression | classification
    params: TreeParams

    def predict_row(self, row: np.ndarray) -> float:
        i = 0
        while self.nodes[i].feature >= 0:
            node = self.nodes[i]
            i = node.left if row[node.feature] <= node.threshold else node.right
        return self.nodes[i].value

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return np.array([self.predict_row(r) for r in X], dtype=np.float64)

    def leaf_index(self, row: np.ndarray) -> int:
        i = 0
        while self.nodes[i].feature >= 0:
            node = self.nodes[i]
            i = node.left if row[node.feature] <= node.threshold else node.right
        return i

    def to_json_dict(self) -> dict:
        return {
            "feature": [n.feature for n in self.nodes],
            "threshold": [n.threshold for n in self.nodes],
            "left": [n.left for n in self.nodes],
            "right": [n.right for n in self.nodes],
            "value": [n.value for n in self.nodes],
            "n_samples": [n.n_samples for n in self.nodes],
        }

    @classmethod
    def from_json_dict(cls, raw: dict, task: str, params: TreeParams) -> "DecisionTree":
        nodes = [
            Node(f, t, l, r, v, n)
            for f, t, l, r, v, n in zip(
                raw["feature"], raw["threshold"], raw["left"], raw["right"], raw["value"], raw["n_samples"]
            )
        ]
        return cls(nodes=nodes, task=task, params=params)


def _leaf_value(y: np.ndarray, task: str) -> float:
    # class-1 fraction doubles as the majority signal (> 0.5 means class 1)
    return float(np.mean(y))


def fit_cart(
    X: np.ndarray,
    y: np.ndarray,
    task: str = "regression",
    params: TreeParams | None = None,
    feature_indices: np.ndarray | None = None,
) -> DecisionTree:
    """Greedy best-split CART; ``feature_indices`` restricts the candidate
    features (forest per-tree subsampling)."""
    params = params or TreeParams()
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    feats = (
        np.arange(X.shape[1], dtype=np.int64)
        if feature_indices is None
        else np.asarray(sorted(feature_indices), dtype=np.int64)
    )
    split_fn = kernels.best_split_regression if task == "regression" else kernels.best_split_gini

    nodes: list[Node] = []
    stack: list[tuple[int, np.ndarray, int]] = []  # (node index, sample idx, depth)
    nodes.append(Node())
    stack.append((0, np.arange(X.shape[0]), 0))
    while stack:
        node_idx, idx, depth = stack.pop()
        y_node = y[idx]
        node = nodes[node_idx]
        node.n_samples = idx.size
        node.value = _leaf_value(y_node, task)
        if (
            idx.size < params.min_samples_split
            or (params.max_depth is not None and depth >= params.max_depth)
            or np.all(y_node == y_node[0])
        ):
            continue
        local_f, threshold, gain = split_fn(X[np.ix_(idx, feats)], y_node, params.min_samples_leaf)
        if local_f < 0:
            continue
        feature = int(feats[local_f])
        mask = X[idx, feature] <= threshold
        left_idx, right_idx = idx[mask], idx[~mask]
        if left_idx.size == 0 or right_idx.size == 0:
            continue
        node.feature = feature
        node.threshold = float(threshold)
        node.left = len(nodes)
        nodes.append(Node())
        node.right = len(nodes)
        nodes.append(Node())
        # push right first so the left subtree is built (and numbered) first
        stack.append((node.right, right_idx, depth + 1))
        stack.append((node.left, left_idx, depth + 1))
    return DecisionTree(nodes=nodes, task=task, params=params)


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------


@dataclass
class Ensemble:
    kind: str  # random_forest | gradient_boosting
    task: str  # regression | classification
    trees: list[DecisionTree]
    n_features: int
    seed: int
    params: TreeParams
    learning_rate: float = 1.0
    base_score: float = 0.0
    feature_subsample: str = "all"  # "all" | "sqrt"

    def to_json_dict(self) -> dict:
        return {
            "version": 1,
            "kind": self.kind,
            "task": self.task,
            "n_features": self.n_features,
            "seed": self.seed,
            "learning_rate": self.learning_rate,
            "base_score": self.base_score,
            "feature_subsample": self.feature_subsample,
            "params": {
                "max_depth": self.params.max_depth,
                "min_samples_split": self.params.min_samples_split,
                "min_samples_leaf": self.params.min_samples_leaf,
            },
            "trees": [t.to_json_dict() for t in self.trees],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, ensure_ascii=False, indent=1) + "\n"

    @classmethod
    def from_json_dict(cls, raw: dict) -> "Ensemble":
        params = TreeParams(**raw["params"])
        return cls(
            kind=raw["kind"],
            task=raw["task"],
            trees=[DecisionTree.from_json_dict(t, raw["task"], params) for t in raw["trees"]],
            n_features=raw["n_features"],
            seed=raw["seed"],
            params=params,
            learning_rate=raw["learning_rate"],
            base_score=raw["base_score"],
            feature_subsample=raw["feature_subsample"],
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), "utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Ensemble":
        return cls.from_json_dict(json.loads(Path(path).read_text("utf-8")))


FOREST_DEFAULTS = TreeParams(max_depth=12, min_samples_split=2, min_samples_leaf=1)
GBM_DEFAULTS = TreeParams(max_depth=3, min_samples_split=2, min_samples_leaf=1)


def fit_forest(
    train: Dataset,
    n_trees: int = 200,
    task: str = "regression",
    params: TreeParams | None = None,
    seed: int = 0,
    bootstrap: bool = True,
    feature_subsample: str = "sqrt",
) -> Ensemble:
    """Bagged CART trees with per-tree feature subsampling (sqrt(D) default)."""
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    params = params or FOREST_DEFAULTS
    children = np.random.SeedSequence(seed).spawn(n_trees)
    d = train.width
    k = max(1, int(math.sqrt(d))) if feature_subsample == "sqrt" else d
    trees = []
    for child in children:
        rng = np.random.default_rng(child)
        idx = rng.integers(0, train.n, train.n) if bootstrap else np.arange(train.n)
        feats = np.sort(rng.permutation(d)[:k]) if feature_subsample == "sqrt" else None
        trees.append(fit_cart(train.X[idx], train.y[idx], task, params, feats))
    return Ensemble(
        kind="random_forest",
        task=task,
        trees=trees,
        n_features=d,
        seed=seed,
        params=params,
        feature_subsample=feature_subsample,
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def fit_gbm(
    train: Dataset,
    n_trees: int = 300,
    learning_rate: float = 0.1,
    task: str = "regression",
    params: TreeParams | None = None,
    seed: int = 0,
) -> Ensemble:
    """Gradient boosting: residual fitting for regression, log-loss with
    Newton leaf steps for binary classification."""
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    if not 0.0 < learning_rate <= 1.0:
        raise ValueError("learning_rate must be in (0, 1]")
    params = params or GBM_DEFAULTS
    trees = []
    if task == "regression":
        base = float(np.mean(train.y))
        current = np.full(train.n, base)
        for _ in range(n_trees):
            residuals = train.y - current
            tree = fit_cart(train.X, residuals, "regression", params)
            current = current + learning_rate * tree.predict(train.X)
            trees.append(tree)
    elif task == "classification":
        classes = np.unique(train.y)
        if classes.size < 2:
            raise DegenerateTargets("classification training set has a single class")
        p0 = float(np.mean(train.y))
        base = math.log(p0 / (1.0 - p0))
        logit = np.full(train.n, base)
        for _ in range(n_trees):
            p = _sigmoid(logit)
            grad = train.y - p
            tree = fit_cart(train.X, grad, "regression", params)
            # Newton step per leaf: sum(residual) / sum(p * (1 - p))
            leaf_of = np.array([tree.leaf_index(row) for row in train.X])
            hess = p * (1.0 - p)
            for leaf in np.unique(leaf_of):
                members = leaf_of == leaf
                denom = float(hess[members].sum())
                num = float(grad[members].sum())
                tree.nodes[leaf].value = num / denom if denom > 1e-12 else 0.0
            logit = logit + learning_rate * tree.predict(train.X)
            trees.append(tree)
    else:
        raise ValueError(f"unknown task {task!r}")
    return Ensemble(
        kind="gradient_boosting",
        task=task,
        trees=trees,
        n_features=train.width,
        seed=seed,
        params=params,
        learning_rate=learning_rate,
        base_score=base,
    )


def predict_proba(model: Ensemble, X: np.ndarray) -> np.ndarray:
    """Class-1 probability (classification models only)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise WidthMismatch(f"expected width {model.n_features}, got {X.shape}")
    if X.shape[0] == 0:
        return np.empty(0)
    if model.kind == "random_forest":
        per_tree = np.vstack([t.predict(X) for t in model.trees])
        return per_tree.mean(axis=0)
    logit = model.base_score + model.learning_rate * sum(t.predict(X) for t in model.trees)
    return _sigmoid(logit)


def predict(model: Ensemble, X: np.ndarray) -> np.ndarray:
    """Regression values, or class labels with majority vote / 0.5 threshold
    (ties go to class 0)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise WidthMismatch(f"expected width {model.n_features}, got {X.shape}")
    if X.shape[0] == 0:
        return np.empty(0)
    if model.task == "regression":
        if model.kind == "random_forest":
            per_tree = np.vstack([t.predict(X) for t in model.trees])
            return per_tree.mean(axis=0)
        return model.base_score + model.learning_rate * sum(t.predict(X) for t in model.trees)
    if model.kind == "random_forest":
        votes = np.vstack([(t.predict(X) > 0.5).astype(np.int64) for t in model.trees])
        class1 = votes.sum(axis=0)
        return (class1 * 2 > len(model.trees)).astype(np.float64)  # exact tie -> class 0
    return (predict_proba(model, X) > 0.5).astype(np.float64)
