"""Minimal random forest for regression and (multiclass) classification.

Trees are grown CART-style on bootstrap resamples with an mtry-feature
split search, variance impurity for regression and Gini for classification.
Determinism is a hard requirement here: per-tree RNG streams are derived
from (seed, tree index) and training rows are put in a canonical
lexicographic order before any sampling, so refitting after shuffling the
training set produces bit-identical predictions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import DataError, SchemaError

__all__ = ["ForestConfig", "TreeModel", "ForestModel", "fit_forest", "predict_forest"]


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 500
    mtry: int | None = None  # default: ceil(sqrt(p)) classify, max(1, p//3) regress
    min_leaf: int = 5
    max_depth: int | None = None
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise DataError("n_trees must be >= 1")
        if self.min_leaf < 1:
            raise DataError("min_leaf must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise DataError("mtry must be >= 1")


@dataclass(frozen=True)
class TreeModel:
    """Flat node arrays; children of node i are left[i], right[i], -1 at leaves."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_value: np.ndarray  # (nodes,) regression mean or (nodes, n_classes) counts

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index for every row of X."""
        out = np.zeros(X.shape[0], dtype=np.intp)
        todo = [(0, np.arange(X.shape[0]))]
        while todo:
            node, rows = todo.pop()
            if self.left[node] < 0:
                out[rows] = node
                continue
            go_left = X[rows, self.feature[node]] <= self.threshold[node]
            todo.append((self.left[node], rows[go_left]))
            todo.append((self.right[node], rows[~go_left]))
        return out


@dataclass(frozen=True)
class ForestModel:
    trees: tuple[TreeModel, ...]
    task: str  # "regression" | "classification"
    n_features: int
    classes: tuple = ()
    config: ForestConfig = field(default_factory=ForestConfig)
    flags: tuple[str, ...] = ()

    def predict(self, X) -> np.ndarray:
        return predict_forest(self, X)


class _TreeBuilder:
    def __init__(self, X, y_num, n_classes, mtry, min_leaf, max_depth, rng):
        self.X = X
        self.y = y_num
        self.n_classes = n_classes  # 0 for regression
        self.mtry = mtry
        self.min_leaf = min_leaf
        self.max_depth = np.inf if max_depth is None else max_depth
        self.rng = rng
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.leaf: list = []

    def _new_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(np.nan)
        self.left.append(-1)
        self.right.append(-1)
        self.leaf.append(None)
        return len(self.feature) - 1

    def _leaf_payload(self, idx):
        if self.n_classes:
            return np.bincount(self.y[idx].astype(np.intp), minlength=self.n_classes).astype(float)
        return float(np.mean(self.y[idx]))

    def _best_split(self, idx, features):
        """Lowest-cost (feature, threshold) over the sampled features, or None.

        Cost is total child SSE (regression) or size-weighted Gini
        (classification), evaluated for every candidate feature at once.
        Ties resolve to the lowest feature index, then the lowest threshold.
        """
        feats = np.sort(features)
        Xn = self.X[np.ix_(idx, feats)]  # (m, q)
        m = Xn.shape[0]
        order = np.argsort(Xn, axis=0, kind="stable")
        sv = np.take_along_axis(Xn, order, axis=0)
        nl = np.arange(1, m, dtype=float)[:, None]
        nr = m - nl
        ok = (sv[:-1] != sv[1:]) & (nl >= self.min_leaf) & (nr >= self.min_leaf)
        if not np.any(ok):
            return None
        y = self.y[idx]
        if self.n_classes:
            onehot = np.zeros((m, self.n_classes))
            onehot[np.arange(m), y.astype(np.intp)] = 1.0
            cum = np.cumsum(onehot[order], axis=0)  # (m, q, K)
            cl = cum[:-1]
            cr = cum[-1][None, :, :] - cl
            cost = (nl - (cl ** 2).sum(axis=2) / nl) + (nr - (cr ** 2).sum(axis=2) / nr)
        else:
            sy = y[order]
            c1 = np.cumsum(sy, axis=0)
            c2 = np.cumsum(sy ** 2, axis=0)
            sl1, sl2 = c1[:-1], c2[:-1]
            sr1 = c1[-1][None, :] - sl1
            sr2 = c2[-1][None, :] - sl2
            cost = (sl2 - sl1 ** 2 / nl) + (sr2 - sr1 ** 2 / nr)
        cost = np.where(ok, cost, np.inf)
        best = float(cost.min())
        if not np.isfinite(best):
            return None
        col = int(np.flatnonzero(cost.min(axis=0) <= best + 1e-12)[0])
        row = int(np.argmin(cost[:, col]))
        return best, int(feats[col]), float((sv[row, col] + sv[row + 1, col]) / 2.0)

    def build(self, idx) -> int:
        root = self._new_node()
        stack = [(root, idx, 0)]
        while stack:
            node, rows, depth = stack.pop()
            y = self.y[rows]
            pure = bool(np.all(y == y[0]))
            if pure or rows.size < 2 * self.min_leaf or depth >= self.max_depth:
                self.leaf[node] = self._leaf_payload(rows)
                continue
            p = self.X.shape[1]
            features = self.rng.choice(p, size=min(self.mtry, p), replace=False)
            split = self._best_split(rows, features)
            if split is None:
                self.leaf[node] = self._leaf_payload(rows)
                continue
            _, f, thr = split
            go_left = self.X[rows, f] <= thr
            lnode, rnode = self._new_node(), self._new_node()
            self.feature[node] = f
            self.threshold[node] = thr
            self.left[node] = lnode
            self.right[node] = rnode
            stack.append((rnode, rows[~go_left], depth + 1))
            stack.append((lnode, rows[go_left], depth + 1))
        return root

    def finish(self) -> TreeModel:
        nodes = len(self.feature)
        if self.n_classes:
            leaf_value = np.zeros((nodes, self.n_classes))
            for i, payload in enumerate(self.leaf):
                if payload is not None:
                    leaf_value[i] = payload
        else:
            leaf_value = np.array([np.nan if v is None else v for v in self.leaf])
        return TreeModel(
            feature=np.asarray(self.feature, dtype=np.intp),
            threshold=np.asarray(self.threshold),
            left=np.asarray(self.left, dtype=np.intp),
            right=np.asarray(self.right, dtype=np.intp),
            leaf_value=leaf_value,
        )


def fit_forest(X, y, config: ForestConfig, task: str = "regression") -> ForestModel:
    """Grow a forest; deterministic in (data multiset, config.seed)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise SchemaError("feature matrix must be 2-dimensional")
    n, p = X.shape
    if task not in ("regression", "classification"):
        raise DataError(f"unknown task {task!r}")
    if n < 1:
        raise DataError("empty training set")
    flags: list[str] = []
    if task == "classification":
        labels = np.asarray(y)
        classes = tuple(np.unique(labels).tolist())
        if len(classes) < 2:
            raise DataError("degenerate outcome: single response class")
        class_index = {c: k for k, c in enumerate(classes)}
        y_num = np.array([class_index[v] for v in labels], dtype=float)
        n_classes = len(classes)
        default_mtry = int(np.ceil(np.sqrt(p)))
    else:
        classes = ()
        y_num = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y_num)):
            raise SchemaError("response contains non-finite entries")
        n_classes = 0
        default_mtry = max(1, p // 3)
    if y_num.shape != (n,):
        raise SchemaError("response length does not match features")
    mtry = config.mtry if config.mtry is not None else default_mtry
    mtry = min(mtry, p)  # cap when one config serves feature sets of different widths
    if np.all(X == X[0:1, :]):
        flags.append("constant_features")

    # canonical row order makes bootstrap draws independent of input order
    order = np.lexsort(tuple([y_num] + [X[:, j] for j in range(p - 1, -1, -1)]))
    Xc, yc = X[order], y_num[order]

    trees = []
    for t in range(config.n_trees):
        rng = np.random.default_rng((config.seed, t))
        idx = rng.integers(0, n, size=n) if config.bootstrap else np.arange(n)
        builder = _TreeBuilder(Xc, yc, n_classes, mtry, config.min_leaf, config.max_depth, rng)
        builder.build(np.sort(idx))
        trees.append(builder.finish())
    return ForestModel(
        trees=tuple(trees),
        task=task,
        n_features=p,
        classes=classes,
        config=config,
        flags=tuple(flags),
    )


def predict_forest(model: ForestModel, x) -> np.ndarray:
    """Mean of tree means (regression) or mean of per-tree leaf proportions.

    Accepts one row or a matrix; classification returns rows on the
    probability simplex with columns in ``model.classes`` order.
    """
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if X.shape[1] != model.n_features:
        raise SchemaError(f"row width {X.shape[1]} does not match training width {model.n_features}")
    if model.task == "classification":
        acc = np.zeros((X.shape[0], len(model.classes)))
        for tree in model.trees:
            counts = tree.leaf_value[tree.apply(X)]
            acc += counts / counts.sum(axis=1, keepdims=True)
        probs = acc / len(model.trees)
        return probs[0] if np.asarray(x).ndim == 1 else probs
    acc = np.zeros(X.shape[0])
    for tree in model.trees:
        acc += tree.leaf_value[tree.apply(X)]
    out = acc / len(model.trees)
    return float(out[0]) if np.asarray(x).ndim == 1 else out
