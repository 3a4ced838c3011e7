"""CART trees with axis-aligned splits, stored as flat node arrays."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Tree:
    """feature < 0 marks a leaf; value holds the mean target (regression)
    or the class histogram (classification)."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        out = np.empty((X.shape[0], self.value.shape[1]))
        for r, x in enumerate(X):
            node = 0
            while self.feature[node] >= 0:
                if x[self.feature[node]] <= self.threshold[node]:
                    node = self.left[node]
                else:
                    node = self.right[node]
            out[r] = self.value[node]
        return out


def _leaf_value(y: np.ndarray, task: str, n_classes: int) -> np.ndarray:
    if task == "regression":
        return np.array([y.mean()])
    return np.bincount(y.astype(int), minlength=n_classes).astype(float) / len(y)


def _impurity_splits(x_sorted: np.ndarray, y_sorted: np.ndarray, min_leaf: int,
                     task: str, n_classes: int):
    """Total child impurity for every admissible split of one sorted feature.

    Returns (scores, thresholds); scores[i] is the impurity when the left
    child takes the first i+min_leaf points.  Uses prefix sums, so the scan
    over a feature is O(n) after sorting.
    """
    n = len(y_sorted)
    sizes_l = np.arange(min_leaf, n - min_leaf + 1)
    if len(sizes_l) == 0:
        return None, None
    valid = x_sorted[sizes_l - 1] < x_sorted[sizes_l]  # only between distinct values
    if not valid.any():
        return None, None
    sizes_l = sizes_l[valid]
    sizes_r = n - sizes_l

    if task == "regression":
        csum = np.cumsum(y_sorted)
        csq = np.cumsum(y_sorted ** 2)
        sum_l = csum[sizes_l - 1]
        sq_l = csq[sizes_l - 1]
        sse_l = sq_l - sum_l ** 2 / sizes_l
        sse_r = (csq[-1] - sq_l) - (csum[-1] - sum_l) ** 2 / sizes_r
        scores = sse_l + sse_r
    else:
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), y_sorted.astype(int)] = 1.0
        counts = np.cumsum(onehot, axis=0)
        cl = counts[sizes_l - 1]
        cr = counts[-1] - cl
        gini_l = sizes_l - (cl ** 2).sum(axis=1) / sizes_l
        gini_r = sizes_r - (cr ** 2).sum(axis=1) / sizes_r
        scores = gini_l + gini_r

    thresholds = 0.5 * (x_sorted[sizes_l - 1] + x_sorted[sizes_l])
    return scores, thresholds


def best_split(X: np.ndarray, y: np.ndarray, feature_ids, min_leaf: int,
               task: str, n_classes: int):
    """Exhaustive scan over the given features; midpoint thresholds.

    Returns (feature, threshold) of the lowest total child impurity, first
    feature winning ties, or None when no admissible split exists.
    """
    best = None
    for f in feature_ids:
        order = np.argsort(X[:, f], kind="stable")
        scores, thresholds = _impurity_splits(
            X[order, f], y[order], min_leaf, task, n_classes)
        if scores is None:
            continue
        k = int(np.argmin(scores))
        if best is None or scores[k] < best[0] - 1e-12:
            best = (scores[k], int(f), float(thresholds[k]))
    if best is None:
        return None
    return best[1], best[2]


def grow_tree(X: np.ndarray, y: np.ndarray, *, task: str, n_classes: int,
              max_depth: int, min_leaf: int, mtry: int,
              rng: np.random.Generator) -> Tree:
    feature, threshold, left, right, value = [], [], [], [], []
    n_features = X.shape[1]

    def add_leaf(y_sub):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(_leaf_value(y_sub, task, n_classes))
        return len(feature) - 1

    def rec(idx, depth):
        y_sub = y[idx]
        if (depth >= max_depth or len(idx) < 2 * min_leaf
                or np.all(y_sub == y_sub[0])):
            return add_leaf(y_sub)
        feats = rng.choice(n_features, size=min(mtry, n_features), replace=False)
        split = best_split(X[idx], y_sub, feats, min_leaf, task, n_classes)
        if split is None:
            return add_leaf(y_sub)
        f, thr = split
        go_left = X[idx, f] <= thr
        node = add_leaf(y_sub)          # placeholder, turned into an inner node
        feature[node] = f
        threshold[node] = thr
        left[node] = rec(idx[go_left], depth + 1)
        right[node] = rec(idx[~go_left], depth + 1)
        return node

    rec(np.arange(len(y)), 0)
    return Tree(np.array(feature), np.array(threshold),
                np.array(left), np.array(right), np.vstack(value))
