"""Minimum-volume enclosing ellipsoid and feature extraction.

The MVEE of a window of multi-sensor measurements condenses the joint
variation across sensors into a handful of geometric descriptors (volume,
semi-axes, orientation, center, eccentricity) that downstream estimators
consume as features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DegenerateCloudError(ValueError):
    """Point cloud does not span the full dimension."""

    def __init__(self, rank: int, dim: int):
        super().__init__(f"point cloud has rank {rank} < dimension {dim}")
        self.rank = rank
        self.dim = dim


@dataclass
class Ellipsoid:
    """{x : (x - center)^T shape (x - center) <= 1} with shape SPD."""

    center: np.ndarray
    shape: np.ndarray

    @property
    def dim(self) -> int:
        return self.center.size

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Quadratic-form value per point; <= 1 means inside."""
        z = np.atleast_2d(points) - self.center
        return np.einsum("ij,jk,ik->i", z, self.shape, z)


@dataclass
class EllipsoidFeatures:
    volume: float
    semi_axes: np.ndarray      # sorted descending
    orientation: np.ndarray    # unit vector of the longest axis
    center: np.ndarray
    eccentricity: float

    def to_vector(self) -> np.ndarray:
        return np.concatenate([[self.volume], self.semi_axes, self.orientation,
                               self.center, [self.eccentricity]])


@dataclass(frozen=True)
class WindowScheme:
    """Four (offset_s, length_s) windows relative to the event time:
    beginning, initial, intermediate, settling."""

    w1: tuple = (-2.0, 2.0)
    w2: tuple = (0.0, 2.0)
    w3: tuple = (2.0, 4.0)
    w4: tuple = (6.0, 8.0)

    def windows(self):
        spans = [(off, off + length)
                 for off, length in (self.w1, self.w2, self.w3, self.w4)]
        for (_, a1), (b0, _) in zip(spans, spans[1:]):
            if b0 < a1 - 1e-12:
                raise ValueError("windows must be non-overlapping and ordered")
        return spans


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)


def mvee(points: np.ndarray, tol: float = 1e-7, max_iter: int = 200000) -> Ellipsoid:
    """Khachiyan's algorithm with Wolfe-Atwood away steps.

    The cloud is whitened first (the MVEE is affine-equivariant, so the
    result maps back exactly); without this, highly eccentric clouds make
    the weight iteration crawl.  Weights u over the points lifted to d+1
    dimensions move onto the point with the largest lifted Mahalanobis
    value M_k (or off the support point with the smallest) until
    max_k M_k - (d+1) <= tol * (d+1).  The returned ellipsoid contains
    every input point within a factor (1 + tol).
    """
    P = np.asarray(points, dtype=float)
    if P.ndim != 2:
        raise ValueError("points must be an n x d matrix")
    n, d = P.shape
    if n < d + 1:
        raise DegenerateCloudError(min(n, d), d)
    mu = P.mean(axis=0)
    centered = P - mu
    rank = np.linalg.matrix_rank(centered, tol=None)
    if rank < d:
        raise DegenerateCloudError(int(rank), d)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    s = np.maximum(s, s[0] * 1e-12)
    whiten = vt.T / s          # x_w = (x - mu) @ whiten
    unwhiten = vt * s[:, None]
    ez = _mvee_core(_hull_reduce(centered @ whiten), tol, max_iter)
    center = mu + ez.center @ unwhiten
    A = whiten @ ez.shape @ whiten.T
    return Ellipsoid(center, 0.5 * (A + A.T))


def _hull_reduce(P: np.ndarray) -> np.ndarray:
    """Only convex-hull vertices can support the MVEE; dropping interior
    points shrinks the weight iteration a lot for dense low-d clouds."""
    n, d = P.shape
    if d > 3 or n <= 4 * (d + 1):
        return P
    try:
        from scipy.spatial import ConvexHull
        hull = ConvexHull(P)
    except Exception:
        return P
    return P[np.sort(hull.vertices)]


def _mvee_core(P: np.ndarray, tol: float, max_iter: int) -> Ellipsoid:
    n, d = P.shape
    Q = np.hstack([P, np.ones((n, 1))])
    u = np.full(n, 1.0 / n)
    dp1 = d + 1
    stall_window = 2000
    best_gap = np.inf
    since_best = 0
    converged = False

    for _ in range(max_iter):
        V = Q.T @ (Q * u[:, None])
        try:
            invVQt = np.linalg.solve(V, Q.T)
        except np.linalg.LinAlgError as exc:
            raise DegenerateCloudError(int(np.linalg.matrix_rank(V)) - 1, d) from exc
        M = np.einsum("ij,ji->i", Q, invVQt)

        j_add = int(np.argmax(M))
        k_add = M[j_add]
        gap = k_add - dp1
        if gap <= tol * dp1:
            converged = True
            break
        if gap < best_gap * (1.0 - 1e-3):
            best_gap = gap
            since_best = 0
        else:
            since_best += 1
            # zig-zag plateau within 100x of target: accept and rescale below
            if since_best >= stall_window and gap <= 100.0 * tol * dp1:
                break

        support = u > 1e-12
        sup_idx = np.nonzero(support)[0]
        j_away = sup_idx[int(np.argmin(M[sup_idx]))]
        k_away = M[j_away]

        if (k_add - dp1) >= (dp1 - k_away) or k_away <= 1.0:
            step = (k_add - dp1) / (dp1 * (k_add - 1.0))
            u *= 1.0 - step
            u[j_add] += step
        else:
            step = min((dp1 - k_away) / (dp1 * (k_away - 1.0)),
                       u[j_away] / (1.0 - u[j_away]))
            u *= 1.0 + step
            u[j_away] = max(u[j_away] - step, 0.0)
            u /= u.sum()
    else:
        raise RuntimeError(f"mvee did not converge in {max_iter} iterations")

    center = u @ P
    cov = P.T @ (P * u[:, None]) - np.outer(center, center)
    A = np.linalg.inv(cov) / d
    if not converged:
        # guarantee containment despite the early exit
        dist = np.einsum("ij,jk,ik->i", P - center, A, P - center)
        A = A / max(dist.max(), 1.0)
    return Ellipsoid(center, 0.5 * (A + A.T))


def features(e: Ellipsoid) -> EllipsoidFeatures:
    """Geometric descriptors from the eigendecomposition of the shape matrix."""
    w, V = np.linalg.eigh(e.shape)
    if not (w > 0).all():
        raise ValueError("shape matrix is not positive definite")
    axes = 1.0 / np.sqrt(w)          # eigh returns ascending w -> descending axes
    order = np.argsort(axes)[::-1]
    axes = axes[order]
    principal = V[:, order[0]]
    if principal[np.argmax(np.abs(principal))] < 0:
        principal = -principal       # sign convention for reproducibility
    volume = unit_ball_volume(e.dim) * float(np.prod(axes))
    return EllipsoidFeatures(volume, axes, principal, e.center.copy(),
                             float(axes[0] / axes[-1]))


JITTER_FLOOR_HZ = 1e-6
PCA_SENSOR_LIMIT = 6


def window_points(grid, t_start: float, t_end: float, channel: str = "freq",
                  detrend_order: int = 0, baseline: np.ndarray = None) -> np.ndarray:
    """Per-timestep sensor vectors over [t_start, t_end).

    With a baseline vector the per-sensor baseline is subtracted (the
    deviation level stays in the cloud's center); otherwise the window is
    detrended against its own per-sensor mean (order 0) or polynomial fit.
    """
    k0 = grid.index_of_time(t_start)
    k1 = grid.index_of_time(t_end)
    if k0 < 0 or k1 > grid.n_samples or k1 <= k0:
        raise ValueError(f"window [{t_start}, {t_end}) outside grid")
    values = getattr(grid, channel)[:, k0:k1]
    if not np.isfinite(values).all():
        if not np.isfinite(values).any():
            raise ValueError("window fully masked")
        raise ValueError("window contains masked cells")
    x = values.astype(float)
    if baseline is not None:
        x = x - np.asarray(baseline)[:, None]
    elif detrend_order == 0:
        x = x - x.mean(axis=1, keepdims=True)
    else:
        k = np.arange(x.shape[1], dtype=float)
        for i in range(x.shape[0]):
            coeff = np.polyfit(k, x[i], detrend_order)
            x[i] = x[i] - np.polyval(coeff, k)
    return x.T  # n_points x n_sensors


def _pca_reduce(points: np.ndarray, out_dim: int) -> np.ndarray:
    centered = points - points.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    basis = vt[:out_dim]
    # fix component signs so the reduction is reproducible
    signs = np.sign(basis[np.arange(out_dim), np.argmax(np.abs(basis), axis=1)])
    signs[signs == 0] = 1.0
    return centered @ (basis * signs[:, None]).T


def windowed_features(grid, t_event: float, scheme: WindowScheme = WindowScheme(),
                      jitter_seed: int = 7):
    """MVEE features for the four event windows, in W1..W4 order.

    Points are per-timestep vectors of sensor frequency deviations from
    each sensor's pre-event (W1) mean, so the per-window cloud center
    tracks the excursion depth while the shape tracks the joint swing.
    Above PCA_SENSOR_LIMIT sensors the cloud is reduced to its top two
    principal components so the MVEE stays well conditioned.  A 1e-6 Hz
    jitter floor guards quiescent windows against exact rank deficiency.
    """
    out = []
    rng = np.random.default_rng(jitter_seed)
    spans = scheme.windows()
    w1 = spans[0]
    k0 = grid.index_of_time(t_event + w1[0])
    k1 = grid.index_of_time(t_event + w1[1])
    if k0 < 0 or k1 <= k0:
        raise ValueError("pre-event window outside grid")
    baseline = np.nanmean(grid.freq[:, k0:k1], axis=1)
    for w_start, w_end in spans:
        pts = window_points(grid, t_event + w_start, t_event + w_end,
                            baseline=baseline)
        if pts.shape[1] > PCA_SENSOR_LIMIT:
            pts = _pca_reduce(pts, 2)
        pts = pts + JITTER_FLOOR_HZ * rng.standard_normal(pts.shape)
        out.append(features(mvee(pts, tol=1e-6)))
    return out
