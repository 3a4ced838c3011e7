"""Signal kernels shared by all pipelines.

RoCoF, angle unwrap / relative shift, FFT magnitude spectra, and
(ensemble) empirical mode decomposition.  Everything here is a pure
function; masked samples are represented as NaN and propagate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from . import seeds


@dataclass
class ImfSet:
    """EMD products, highest-frequency mode first, plus the residue."""

    imfs: list
    residue: np.ndarray

    def reconstruct(self) -> np.ndarray:
        out = self.residue.copy()
        for imf in self.imfs:
            out += imf
        return out


@dataclass
class SpectrumFeatures:
    """One-sided magnitude spectrum (length nfft/2 + 1) with its bin width."""

    bins: np.ndarray
    df_hz: float


def median_filter(x: np.ndarray, width: int) -> np.ndarray:
    """Odd-width running median with edge replication; NaN windows stay NaN."""
    if width <= 1:
        return np.asarray(x, dtype=float).copy()
    if width % 2 == 0:
        raise ValueError("median filter width must be odd")
    x = np.asarray(x, dtype=float)
    half = width // 2
    pad = np.concatenate([np.repeat(x[0], half), x, np.repeat(x[-1], half)])
    windows = np.lib.stride_tricks.sliding_window_view(pad, width)
    return np.median(windows, axis=1)


def rocof(freq_hz: np.ndarray, dt_s: float, smooth_n: int = 1) -> np.ndarray:
    """Rate of change of frequency in Hz/s.

    Median filter of width smooth_n first, then central differences
    (one-sided at the endpoints).  NaN gaps propagate.
    """
    freq_hz = np.asarray(freq_hz, dtype=float)
    if freq_hz.ndim == 2:
        return np.vstack([rocof(row, dt_s, smooth_n) for row in freq_hz])
    if freq_hz.size < 2:
        raise ValueError("rocof needs at least 2 samples")
    f = median_filter(freq_hz, smooth_n)
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - f[:-2]) / (2.0 * dt_s)
    out[0] = (f[1] - f[0]) / dt_s
    out[-1] = (f[-1] - f[-2]) / dt_s
    return out


def unwrap_deg(angle_deg: np.ndarray) -> np.ndarray:
    """Remove +-360 jumps along the last axis."""
    return np.unwrap(np.asarray(angle_deg, dtype=float), period=360.0, axis=-1)


def relative_angle_shift(angle_deg: np.ndarray, ref_row: int,
                         pre_event: slice) -> np.ndarray:
    """Per-sensor unwrapped angle relative to a reference sensor, zeroed
    on each sensor's own pre-event-window mean."""
    a = unwrap_deg(angle_deg)
    ref = a[ref_row]
    if not np.isfinite(ref).any():
        raise ValueError("reference sensor is fully masked")
    ras = a - ref[None, :]
    baseline = np.nanmean(ras[:, pre_event], axis=1, keepdims=True)
    return ras - baseline


def next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


def fft_mag(series: np.ndarray, dt_s: float = 1.0) -> SpectrumFeatures:
    """One-sided magnitude spectrum after zero-padding to the next power of two."""
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise ValueError("empty input")
    nfft = next_pow2(x.size)
    mags = np.abs(np.fft.rfft(x, n=nfft))
    return SpectrumFeatures(mags, 1.0 / (nfft * dt_s))


def parseval_gap(series: np.ndarray, spec: SpectrumFeatures) -> float:
    """Relative mismatch between time-domain energy and spectrum energy."""
    x = np.asarray(series, dtype=float)
    nfft = 2 * (spec.bins.size - 1)
    b = spec.bins
    spectral = (b[0] ** 2 + 2.0 * np.sum(b[1:-1] ** 2) + b[-1] ** 2) / nfft
    temporal = np.sum(x ** 2)
    return abs(spectral - temporal) / max(temporal, 1e-300)


def _local_extrema(x: np.ndarray):
    """Indices of strict local maxima and minima (plateau midpoints included)."""
    d = np.diff(x)
    rising = d > 0
    falling = d < 0
    maxima, minima = [], []
    i = 0
    n = len(d)
    while i < n - 1:
        if d[i] == 0:
            i += 1
            continue
        j = i + 1
        while j < n and d[j] == 0:
            j += 1
        if j == n:
            break
        mid = (i + 1 + j) // 2
        if rising[i] and falling[j]:
            maxima.append(mid)
        elif falling[i] and rising[j]:
            minima.append(mid)
        i = j
    return np.array(maxima, dtype=int), np.array(minima, dtype=int)


def _mirrored_envelope(t: np.ndarray, x: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Natural cubic spline through the extrema at idx, with up to two extrema
    reflected about each endpoint so the envelope covers the full span."""
    te, ve = t[idx], x[idx]
    n_pad = min(2, len(idx))
    tl = 2.0 * t[0] - te[:n_pad][::-1]
    vl = ve[:n_pad][::-1]
    tr = 2.0 * t[-1] - te[-n_pad:][::-1]
    vr = ve[-n_pad:][::-1]
    tt = np.concatenate([tl, te, tr])
    vv = np.concatenate([vl, ve, vr])
    keep = np.concatenate([[True], np.diff(tt) > 0])
    tt, vv = tt[keep], vv[keep]
    if len(tt) < 2:
        return np.full_like(x, vv[0])
    if len(tt) < 4:
        return np.interp(t, tt, vv)
    return CubicSpline(tt, vv, bc_type="natural")(t)


def _count_zero_crossings(x: np.ndarray) -> int:
    s = np.sign(x)
    s = s[s != 0]
    return int(np.sum(s[1:] * s[:-1] < 0))


def emd(series: np.ndarray, max_imfs: int = 10, sift_sd: float = 0.3,
        max_sifts: int = 10) -> ImfSet:
    """Empirical mode decomposition by classical sifting.

    Envelopes are natural cubic splines through the maxima / minima with
    mirrored boundary extrema.  Sifting stops when the normalized change
    SD = sum((h_prev - h)^2) / sum(h_prev^2) drops below sift_sd and the
    zero-crossing / extrema counts differ by at most one, or after
    max_sifts passes.  Extraction stops on a monotonic residue or at
    max_imfs.  Reconstruction (sum of IMFs + residue) is exact up to
    floating-point error.
    """
    x = np.asarray(series, dtype=float)
    if x.size < 8:
        raise ValueError("emd needs at least 8 samples")
    t = np.arange(x.size, dtype=float)
    residue = x.copy()
    imfs: list[np.ndarray] = []

    while len(imfs) < max_imfs:
        maxima, minima = _local_extrema(residue)
        if len(maxima) < 2 or len(minima) < 2:
            break  # monotonic (or trend-only) residue
        h = residue.copy()
        for _ in range(max_sifts):
            maxima, minima = _local_extrema(h)
            if len(maxima) < 2 or len(minima) < 2:
                break
            upper = _mirrored_envelope(t, h, maxima)
            lower = _mirrored_envelope(t, h, minima)
            mean_env = 0.5 * (upper + lower)
            h_new = h - mean_env
            denom = np.sum(h ** 2)
            sd = np.sum((h - h_new) ** 2) / denom if denom > 0 else 0.0
            h = h_new
            if sd < sift_sd:
                n_ext = len(_local_extrema(h)[0]) + len(_local_extrema(h)[1])
                if abs(n_ext - _count_zero_crossings(h)) <= 1:
                    break
        imfs.append(h)
        residue = residue - h

    return ImfSet(imfs, residue)


def eemd(series: np.ndarray, n_ensemble: int = 50, noise_eps: float = 0.2,
         seed: int = 0, max_imfs: int = 10, sift_sd: float = 0.3) -> ImfSet:
    """Ensemble EMD: mean decomposition over noise-perturbed copies.

    Each member decomposes series + eps * std(series) * white noise with a
    per-member seed derived from the master seed, so a fixed seed gives a
    bit-identical result.  Members with fewer IMFs are padded with zeros
    before averaging, which keeps the ensemble-mean reconstruction within
    the mean of the injected noise.
    """
    if n_ensemble < 1:
        raise ValueError("n_ensemble must be >= 1")
    if noise_eps < 0:
        raise ValueError("noise_eps must be >= 0")
    x = np.asarray(series, dtype=float)
    if n_ensemble == 1 and noise_eps == 0.0:
        return emd(x, max_imfs=max_imfs, sift_sd=sift_sd)

    sigma = float(np.std(x))
    members = []
    for k in range(n_ensemble):
        noise = seeds.rng(seed, f"eemd-member-{k}").standard_normal(x.size)
        members.append(emd(x + noise_eps * sigma * noise,
                           max_imfs=max_imfs, sift_sd=sift_sd))

    n_modes = max(len(m.imfs) for m in members)
    imfs = [np.zeros_like(x) for _ in range(n_modes)]
    residue = np.zeros_like(x)
    for m in members:
        for i, imf in enumerate(m.imfs):
            imfs[i] += imf
        residue += m.residue
    imfs = [imf / n_ensemble for imf in imfs]
    residue /= n_ensemble
    return ImfSet(imfs, residue)
