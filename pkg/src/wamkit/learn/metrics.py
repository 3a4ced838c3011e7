"""Shared accuracy metrics."""

from __future__ import annotations

import numpy as np


def accuracy_metrics(pred, truth, kind: str) -> float:
    """Classification: percent correct.  Regression: 100 * (1 - MAPE), with
    per-sample denominators floored at 1e-9 so exact-zero targets do not
    blow up the ratio."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape[0] == 0:
        raise ValueError("empty inputs")
    if kind == "classification":
        if pred.ndim == 2:
            pred = pred.argmax(axis=1)
        return 100.0 * float(np.mean(pred == truth))
    if kind == "regression":
        denom = np.maximum(np.abs(truth), 1e-9)
        return 100.0 * float(1.0 - np.mean(np.abs(pred - truth) / denom))
    raise ValueError(f"unknown metric kind {kind!r}")
