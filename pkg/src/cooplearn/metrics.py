"""Parzen-window log-likelihood, PSNR and SSIM."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import logsumexp

PSNR_CAP = 99.0


@dataclass(frozen=True)
class ParzenEstimator:
    """Equal-weight isotropic Gaussian mixture centred on reference samples."""

    reference: np.ndarray
    bandwidth: float

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")


@dataclass(frozen=True)
class LikelihoodReport:
    mean: float
    stderr: float
    n: int

    def __str__(self):
        return f"{self.mean:.4f} +/- {self.stderr:.4f} (n={self.n})"


def _flat(a):
    a = np.asarray(a, dtype=np.float64)
    return a.reshape(len(a), -1)


def parzen_log_density(reference, points, bandwidth, chunk=512):
    """Per-point log density of ``points`` under the Parzen window on ``reference``."""
    ref, pts = _flat(reference), _flat(points)
    if len(ref) == 0 or len(pts) == 0:
        raise ValueError("Parzen estimation needs nonempty reference and test sets")
    if ref.shape[1] != pts.shape[1]:
        raise ValueError(f"dimension mismatch: reference {ref.shape[1]}, test {pts.shape[1]}")
    m, D = ref.shape
    const = -math.log(m) - 0.5 * D * math.log(2 * math.pi * bandwidth ** 2)
    ref_sq = (ref ** 2).sum(axis=1)
    out = np.empty(len(pts))
    for s in range(0, len(pts), chunk):
        p = pts[s:s + chunk]
        d2 = (p ** 2).sum(axis=1)[:, None] + ref_sq[None, :] - 2 * p @ ref.T
        np.maximum(d2, 0, out=d2)
        out[s:s + chunk] = logsumexp(-d2 / (2 * bandwidth ** 2), axis=1) + const
    return out


def parzen_loglik(est: ParzenEstimator, test) -> LikelihoodReport:
    ll = parzen_log_density(est.reference, test, est.bandwidth)
    se = float(ll.std(ddof=1) / math.sqrt(len(ll))) if len(ll) > 1 else 0.0
    return LikelihoodReport(float(ll.mean()), se, len(ll))


def default_bandwidth_grid():
    return np.logspace(-2, 0, 20)


def select_bandwidth(reference, validation, grid=None) -> float:
    """Grid value with the best mean validation log-likelihood; ties go to the smaller value."""
    grid = default_bandwidth_grid() if grid is None else np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("bandwidth grid is empty")
    if np.any(grid <= 0):
        raise ValueError("bandwidths must be positive")
    best, best_ll = None, -np.inf
    for sigma in np.sort(grid):
        ll = parzen_log_density(reference, validation, sigma).mean()
        if ll > best_ll:
            best, best_ll = float(sigma), ll
    return best


def parzen_protocol(samples, test, validation, grid=None) -> tuple[LikelihoodReport, float]:
    """Pick the bandwidth on ``validation``, then score ``test``."""
    sigma = select_bandwidth(samples, validation, grid)
    return parzen_loglik(ParzenEstimator(np.asarray(samples), sigma), test), sigma


def psnr(a, b, peak=255.0, region=None, cap=PSNR_CAP) -> float:
    """10 log10(peak^2 / MSE), restricted to ``region`` (nonzero entries) if given."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    diff = (a - b) ** 2
    if region is not None:
        sel = np.broadcast_to(np.asarray(region) != 0, a.shape)
        if not sel.any():
            raise ValueError("PSNR region is empty")
        diff = diff[sel]
    mse = float(diff.mean())
    if mse == 0:
        return cap
    return min(10 * math.log10(peak * peak / mse), cap)


def ssim(a, b, window=8, k1=0.01, k2=0.03, data_range=255.0) -> float:
    """Mean SSIM over all ``window`` x ``window`` patches (uniform weights).

    Inputs are (H, W) or (C, H, W); channels are averaged.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.shape[-1] < window or a.shape[-2] < window:
        raise ValueError(f"window {window} does not fit image {a.shape[-2:]}")
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    pa = sliding_window_view(a, (window, window), axis=(-2, -1))
    pb = sliding_window_view(b, (window, window), axis=(-2, -1))
    mu_a = pa.mean(axis=(-2, -1))
    mu_b = pb.mean(axis=(-2, -1))
    var_a = (pa * pa).mean(axis=(-2, -1)) - mu_a * mu_a
    var_b = (pb * pb).mean(axis=(-2, -1)) - mu_b * mu_b
    cov = (pa * pb).mean(axis=(-2, -1)) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float((num / den).mean())


def region_crop(img, mask):
    """Crop an image to the bounding box of the nonzero mask entries."""
    mask = np.asarray(mask)
    m2 = mask.reshape(-1, *mask.shape[-2:]).any(axis=0)
    rows = np.flatnonzero(m2.any(axis=1))
    cols = np.flatnonzero(m2.any(axis=0))
    if rows.size == 0:
        raise ValueError("mask is empty")
    return np.asarray(img)[..., rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1]
