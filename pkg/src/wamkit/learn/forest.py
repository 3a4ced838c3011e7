"""Random forests over the CART kernel."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import seeds
from .tree import Tree, grow_tree


@dataclass
class ForestParams:
    n_trees: int = 100
    max_depth: int = 25
    min_leaf: int = 2
    mtry: int = None          # default: ceil(sqrt(p)) classif / ceil(p/3) regr
    bootstrap: bool = True
    seed: int = 0


@dataclass
class Forest:
    trees: list
    params: ForestParams
    task: str                 # "regression" | "classification"
    n_classes: int
    n_features: int
    bootstrap_idx: list = field(default_factory=list, repr=False)

    @property
    def seed(self) -> int:
        return self.params.seed


def _resolve_mtry(params: ForestParams, p: int, task: str) -> int:
    if params.mtry is not None:
        return params.mtry
    if task == "classification":
        return math.ceil(math.sqrt(p))
    return math.ceil(p / 3)


def fit_forest(X: np.ndarray, y: np.ndarray, params: ForestParams = None,
               task: str = "regression") -> Forest:
    """Fit a forest of CART trees on bootstrap samples.

    Splits scan mtry features drawn per node; everything is deterministic
    under params.seed.  Constant targets simply yield single-leaf trees.
    """
    params = params or ForestParams()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-D with one row per target")
    if len(y) < 2:
        raise ValueError("need at least 2 samples")
    n, p = X.shape
    n_classes = int(y.max()) + 1 if task == "classification" else 1
    mtry = _resolve_mtry(params, p, task)

    trees, boots = [], []
    for k in range(params.n_trees):
        rng = seeds.rng(params.seed, f"tree-{k}")
        idx = rng.integers(0, n, size=n) if params.bootstrap else np.arange(n)
        boots.append(idx)
        trees.append(grow_tree(X[idx], y[idx], task=task, n_classes=n_classes,
                               max_depth=params.max_depth, min_leaf=params.min_leaf,
                               mtry=mtry, rng=rng))
    return Forest(trees, params, task, n_classes, p, boots)


def predict_forest(forest: Forest, x: np.ndarray) -> np.ndarray:
    """Mean of tree outputs (regression) or the per-class vote fractions
    (classification).  Accepts a single sample or a batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != forest.n_features:
        raise ValueError(f"expected {forest.n_features} features, got {X.shape[1]}")
    if forest.task == "regression":
        acc = np.zeros(X.shape[0])
        for tree in forest.trees:
            acc += tree.predict(X)[:, 0]
        out = acc / len(forest.trees)
        return float(out[0]) if single else out
    votes = np.zeros((X.shape[0], forest.n_classes))
    for tree in forest.trees:
        votes[np.arange(X.shape[0]), tree.predict(X).argmax(axis=1)] += 1.0
    probs = votes / len(forest.trees)
    return probs[0] if single else probs


def oob_error(forest: Forest, X: np.ndarray, y: np.ndarray) -> float:
    """Out-of-bag MSE (regression) or error rate (classification)."""
    if not forest.bootstrap_idx:
        raise ValueError("forest was fit without bootstrap")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    n = len(y)
    if forest.task == "regression":
        acc = np.zeros(n)
        cnt = np.zeros(n)
        for tree, idx in zip(forest.trees, forest.bootstrap_idx):
            oob = np.ones(n, dtype=bool)
            oob[idx] = False
            if oob.any():
                acc[oob] += tree.predict(X[oob])[:, 0]
                cnt[oob] += 1.0
        seen = cnt > 0
        return float(np.mean((acc[seen] / cnt[seen] - y[seen]) ** 2))
    votes = np.zeros((n, forest.n_classes))
    for tree, idx in zip(forest.trees, forest.bootstrap_idx):
        oob = np.ones(n, dtype=bool)
        oob[idx] = False
        if oob.any():
            votes[np.nonzero(oob)[0], tree.predict(X[oob]).argmax(axis=1)] += 1.0
    seen = votes.sum(axis=1) > 0
    return float(np.mean(votes[seen].argmax(axis=1) != y[seen]))
