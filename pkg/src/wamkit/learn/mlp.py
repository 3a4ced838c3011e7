"""Multilayer perceptron with backprop and minibatch SGD + momentum."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import seeds


class TrainingDiverged(RuntimeError):
    """Loss became NaN/inf during training."""


@dataclass
class SgdConfig:
    lr: float = 0.05
    momentum: float = 0.9
    epochs: int = 200
    batch: int = 32


@dataclass
class TrainReport:
    loss_curve: np.ndarray
    final_metric: float
    n_train: int
    n_val: int
    n_test: int
    seed: int


@dataclass
class Mlp:
    """Sigmoid/ReLU hidden layers; softmax (classification) or linear
    (regression) output."""

    layer_sizes: list
    weights: list
    biases: list
    activation: str = "sigmoid"
    task: str = "classification"

    def check_shapes(self):
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_sizes[k], self.layer_sizes[k + 1]):
                raise ValueError(f"weight {k} shape {w.shape} inconsistent")
            if b.shape != (self.layer_sizes[k + 1],):
                raise ValueError(f"bias {k} shape {b.shape} inconsistent")


def init_mlp(layer_sizes, activation: str = "sigmoid",
             task: str = "classification", seed: int = 0) -> Mlp:
    rng = seeds.rng(seed, "mlp-init")
    weights, biases = [], []
    for a, b in zip(layer_sizes, layer_sizes[1:]):
        weights.append(rng.standard_normal((a, b)) * np.sqrt(2.0 / a))
        biases.append(np.zeros(b))
    return Mlp(list(layer_sizes), weights, biases, activation, task)


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return 1.0 / (1.0 + np.exp(-z))


def _act_grad(a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (a > 0).astype(float)
    return a * (1.0 - a)


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _forward(mlp: Mlp, X: np.ndarray):
    acts = [X]
    h = X
    last = len(mlp.weights) - 1
    for k, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = h @ w + b
        if k == last:
            h = softmax(z) if mlp.task == "classification" else z
        else:
            h = _act(z, mlp.activation)
        acts.append(h)
    return acts


def predict_mlp(mlp: Mlp, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return _forward(mlp, X)[-1]


def mlp_loss(mlp: Mlp, X: np.ndarray, y: np.ndarray) -> float:
    """Mean cross-entropy (classification) or mean squared error (regression)."""
    out = predict_mlp(mlp, X)
    if mlp.task == "classification":
        p = out[np.arange(len(out)), y.astype(int)]
        return float(-np.mean(np.log(np.clip(p, 1e-12, None))))
    y2 = np.atleast_2d(np.asarray(y, dtype=float).reshape(len(out), -1))
    return float(np.mean((out - y2) ** 2))


def mlp_gradients(mlp: Mlp, X: np.ndarray, y: np.ndarray):
    """Backprop gradients of the mean loss over the batch."""
    n = len(X)
    acts = _forward(mlp, X)
    out = acts[-1]
    if mlp.task == "classification":
        onehot = np.zeros_like(out)
        onehot[np.arange(n), y.astype(int)] = 1.0
        delta = (out - onehot) / n                 # softmax + CE
        p = out[np.arange(n), y.astype(int)]
        loss = float(-np.mean(np.log(np.clip(p, 1e-12, None))))
    else:
        y2 = np.asarray(y, dtype=float).reshape(n, -1)
        delta = 2.0 * (out - y2) / (n * y2.shape[1])
        loss = float(np.mean((out - y2) ** 2))

    dw = [None] * len(mlp.weights)
    db = [None] * len(mlp.biases)
    for k in range(len(mlp.weights) - 1, -1, -1):
        dw[k] = acts[k].T @ delta
        db[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ mlp.weights[k].T) * _act_grad(acts[k], mlp.activation)
    return loss, dw, db


def fit_mlp(X: np.ndarray, y: np.ndarray, arch=None, sgd: SgdConfig = None,
            activation: str = "sigmoid", task: str = "classification",
            seed: int = 0, mlp: Mlp = None):
    """Train an MLP; returns (Mlp, TrainReport).

    arch is the full layer-size list (input, hidden..., output).  Batches
    are drawn by a seed-derived shuffle each epoch, so runs replay
    identically.  A NaN/inf loss aborts with TrainingDiverged.
    """
    sgd = sgd or SgdConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if mlp is None:
        mlp = init_mlp(arch, activation, task, seed)
    mlp.check_shapes()
    if task == "classification" and mlp.layer_sizes[-1] < int(y.max()) + 1:
        raise ValueError("output layer smaller than the number of classes")

    vel_w = [np.zeros_like(w) for w in mlp.weights]
    vel_b = [np.zeros_like(b) for b in mlp.biases]
    n = len(X)
    losses = []
    for epoch in range(sgd.epochs):
        order = seeds.rng(seed, f"mlp-epoch-{epoch}").permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, sgd.batch):
            idx = order[start:start + sgd.batch]
            loss, dw, db = mlp_gradients(mlp, X[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"loss {loss} at epoch {epoch} (lr={sgd.lr}, batch={sgd.batch})")
            epoch_loss += loss
            n_batches += 1
            for k in range(len(mlp.weights)):
                vel_w[k] = sgd.momentum * vel_w[k] - sgd.lr * dw[k]
                vel_b[k] = sgd.momentum * vel_b[k] - sgd.lr * db[k]
                mlp.weights[k] += vel_w[k]
                mlp.biases[k] += vel_b[k]
        losses.append(epoch_loss / max(n_batches, 1))

    report = TrainReport(np.array(losses), float(losses[-1]), n, 0, 0, seed)
    return mlp, report
