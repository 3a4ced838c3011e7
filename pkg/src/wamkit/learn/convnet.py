"""Small convolutional network: [conv3x3 -> relu -> maxpool2] x 2, then a
64-unit dense relu layer and a softmax head.  Pure numpy via im2col."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import seeds
from .mlp import SgdConfig, TrainReport, TrainingDiverged, softmax


@dataclass
class ConvNet:
    input_shape: tuple      # (H, W, C); H and W divisible by 4
    n_classes: int
    W1: np.ndarray          # (3, 3, C, F1)
    b1: np.ndarray
    W2: np.ndarray          # (3, 3, F1, F2)
    b2: np.ndarray
    Wd: np.ndarray          # (H/4 * W/4 * F2, 64)
    bd: np.ndarray
    Wo: np.ndarray          # (64, K)
    bo: np.ndarray

    def params(self):
        return [self.W1, self.b1, self.W2, self.b2,
                self.Wd, self.bd, self.Wo, self.bo]


def init_convnet(input_shape, n_classes: int, f1: int = 8, f2: int = 16,
                 dense: int = 64, seed: int = 0) -> ConvNet:
    H, W, C = input_shape
    if H % 4 or W % 4:
        raise ValueError("input height/width must be divisible by 4")
    rng = seeds.rng(seed, "convnet-init")

    def he(shape, fan_in):
        return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)

    flat = (H // 4) * (W // 4) * f2
    return ConvNet(
        tuple(input_shape), n_classes,
        he((3, 3, C, f1), 9 * C), np.zeros(f1),
        he((3, 3, f1, f2), 9 * f1), np.zeros(f2),
        he((flat, dense), flat), np.zeros(dense),
        he((dense, n_classes), dense), np.zeros(n_classes),
    )


def _im2col(x: np.ndarray) -> np.ndarray:
    """(N,H,W,C) -> (N,H,W,3,3,C) same-padded 3x3 windows."""
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))
    return win.transpose(0, 1, 2, 4, 5, 3)


def _conv_forward(x, W, b):
    N, H, Wd, _ = x.shape
    cols = _im2col(x).reshape(N * H * Wd, -1)
    out = cols @ W.reshape(-1, W.shape[3]) + b
    return out.reshape(N, H, Wd, W.shape[3]), cols


def _conv_backward(dout, cols, x_shape, W):
    N, H, Wd, C = x_shape
    F = W.shape[3]
    dflat = dout.reshape(N * H * Wd, F)
    dW = (cols.T @ dflat).reshape(W.shape)
    db = dflat.sum(axis=0)
    # dx = full correlation with the spatially flipped, channel-swapped kernel
    W_rot = W[::-1, ::-1].transpose(0, 1, 3, 2)       # (3, 3, F, C)
    cols_d = _im2col(dout).reshape(N * H * Wd, -1)
    dx = (cols_d @ W_rot.reshape(-1, C)).reshape(N, H, Wd, C)
    return dx, dW, db


def _pool_forward(x):
    N, H, W, C = x.shape
    xr = x.reshape(N, H // 2, 2, W // 2, 2, C)
    windows = xr.transpose(0, 1, 3, 5, 2, 4).reshape(N, H // 2, W // 2, C, 4)
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
    return out, arg


def _pool_backward(dout, arg, x_shape):
    N, H, W, C = x_shape
    d = np.zeros((N, H // 2, W // 2, C, 4))
    np.put_along_axis(d, arg[..., None], dout[..., None], axis=-1)
    d = d.reshape(N, H // 2, W // 2, C, 2, 2)
    return d.transpose(0, 1, 4, 2, 5, 3).reshape(N, H, W, C)


def _forward(net: ConvNet, x: np.ndarray):
    a1, cols1 = _conv_forward(x, net.W1, net.b1)
    r1 = np.maximum(a1, 0.0)
    p1, arg1 = _pool_forward(r1)
    a2, cols2 = _conv_forward(p1, net.W2, net.b2)
    r2 = np.maximum(a2, 0.0)
    p2, arg2 = _pool_forward(r2)
    flat = p2.reshape(len(x), -1)
    hd = np.maximum(flat @ net.Wd + net.bd, 0.0)
    probs = softmax(hd @ net.Wo + net.bo)
    return probs, (x, cols1, r1, arg1, p1, cols2, r2, arg2, p2, flat, hd)


def predict_convnet(net: ConvNet, images: np.ndarray) -> np.ndarray:
    images = _as_batch(net, images)
    return _forward(net, images)[0]


def _as_batch(net, images):
    images = np.asarray(images, dtype=float)
    if images.ndim == len(net.input_shape):
        images = images[None]
    if images.shape[1:] != net.input_shape:
        raise ValueError(f"expected images of shape {net.input_shape}")
    return images


def conv_loss(net: ConvNet, images: np.ndarray, labels: np.ndarray) -> float:
    probs = predict_convnet(net, images)
    p = probs[np.arange(len(probs)), np.asarray(labels, dtype=int)]
    return float(-np.mean(np.log(np.clip(p, 1e-12, None))))


def conv_gradients(net: ConvNet, images: np.ndarray, labels: np.ndarray):
    images = _as_batch(net, images)
    labels = np.asarray(labels, dtype=int)
    n = len(images)
    probs, cache = _forward(net, images)
    x, cols1, r1, arg1, p1, cols2, r2, arg2, p2, flat, hd = cache

    loss = float(-np.mean(np.log(np.clip(probs[np.arange(n), labels], 1e-12, None))))
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n

    dWo = hd.T @ dlogits
    dbo = dlogits.sum(axis=0)
    dhd = (dlogits @ net.Wo.T) * (hd > 0)
    dWd = flat.T @ dhd
    dbd = dhd.sum(axis=0)
    dp2 = (dhd @ net.Wd.T).reshape(p2.shape)

    dr2 = _pool_backward(dp2, arg2, r2.shape)
    da2 = dr2 * (r2 > 0)
    dp1, dW2, db2 = _conv_backward(da2, cols2, p1.shape, net.W2)
    dr1 = _pool_backward(dp1, arg1, r1.shape)
    da1 = dr1 * (r1 > 0)
    _, dW1, db1 = _conv_backward(da1, cols1, x.shape, net.W1)
    return loss, [dW1, db1, dW2, db2, dWd, dbd, dWo, dbo]


def fit_convnet(images: np.ndarray, labels: np.ndarray, sgd: SgdConfig = None,
                f1: int = 8, f2: int = 16, dense: int = 64, seed: int = 0,
                net: ConvNet = None):
    """Train the fixed-architecture convnet; returns (ConvNet, TrainReport).

    Deterministic under seed: init and the per-epoch shuffles both derive
    from it.  NaN/inf loss aborts with TrainingDiverged.
    """
    sgd = sgd or SgdConfig(lr=0.01, momentum=0.9, epochs=30, batch=32)
    images = np.asarray(images, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if net is None:
        net = init_convnet(images.shape[1:], int(labels.max()) + 1,
                           f1=f1, f2=f2, dense=dense, seed=seed)
    params = net.params()
    vel = [np.zeros_like(p) for p in params]
    n = len(images)
    losses = []
    for epoch in range(sgd.epochs):
        order = seeds.rng(seed, f"convnet-epoch-{epoch}").permutation(n)
        total, batches = 0.0, 0
        for start in range(0, n, sgd.batch):
            idx = order[start:start + sgd.batch]
            loss, grads = conv_gradients(net, images[idx], labels[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss {loss} at epoch {epoch}")
            total += loss
            batches += 1
            for k, (p, g) in enumerate(zip(params, grads)):
                vel[k] = sgd.momentum * vel[k] - sgd.lr * g
                p += vel[k]
        losses.append(total / max(batches, 1))
    report = TrainReport(np.array(losses), float(losses[-1]), n, 0, 0, seed)
    return net, report
