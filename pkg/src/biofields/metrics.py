"""Regression metrics, image quality (PSNR/SSIM), and feature visualization.

SSIM is implemented here from first principles (separable Gaussian window
over numpy sliding views); the test suite pins it against scikit-image.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, ShapeError

PSNR_CAP_DB = 100.0
SSIM_SIGMA = 1.5
SSIM_RADIUS = 5      # 11x11 window
SSIM_K1, SSIM_K2 = 0.01, 0.03


@dataclass
class MetricReport:
    mae: float
    mare: float
    rmse: float
    n: int


def regression_metrics(preds, gts):
    preds = np.asarray(preds, dtype=np.float64).reshape(-1)
    gts = np.asarray(gts, dtype=np.float64).reshape(-1)
    if preds.shape != gts.shape or preds.size == 0:
        raise ShapeError(f"metric inputs must match and be non-empty, "
                         f"got {preds.shape} vs {gts.shape}")
    if np.any(gts <= 0):
        raise DataError("MARE undefined: ground truth must be strictly positive")
    err = np.abs(preds - gts)
    return MetricReport(
        mae=float(err.mean()),
        mare=float((err / gts).mean()),
        rmse=float(np.sqrt(((preds - gts) ** 2).mean())),
        n=preds.size,
    )


def psnr(img_a, img_b):
    """10*log10(1/MSE) on unit-range images, capped at 100 dB."""
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(((a - b) ** 2).mean())
    if mse < 1e-10:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def _gauss_kernel(sigma=SSIM_SIGMA, radius=SSIM_RADIUS):
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _gauss_filter(img, k):
    r = len(k) // 2
    p = np.pad(img, r, mode="symmetric")
    cols = sliding_window_view(p, len(k), axis=0) @ k
    return sliding_window_view(cols, len(k), axis=1) @ k


def _ssim_channel(a, b):
    k = _gauss_kernel()
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    ua, ub = _gauss_filter(a, k), _gauss_filter(b, k)
    va = _gauss_filter(a * a, k) - ua * ua
    vb = _gauss_filter(b * b, k) - ub * ub
    vab = _gauss_filter(a * b, k) - ua * ub
    s = ((2 * ua * ub + c1) * (2 * vab + c2)) / ((ua ** 2 + ub ** 2 + c1) * (va + vb + c2))
    pad = SSIM_RADIUS
    return float(s[pad:-pad, pad:-pad].mean())


def ssim(img_a, img_b):
    """Mean structural similarity, Gaussian-weighted, channel-averaged."""
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if min(a.shape[0], a.shape[1]) < 2 * SSIM_RADIUS + 1:
        raise ShapeError(f"images smaller than the {2*SSIM_RADIUS+1}x{2*SSIM_RADIUS+1} window")
    return float(np.mean([_ssim_channel(a[..., c], b[..., c]) for c in range(a.shape[2])]))


def image_metrics(img_a, img_b):
    return psnr(img_a, img_b), ssim(img_a, img_b)


def feature_pca_rgb(feature_map):
    """Project pixel features onto their top-3 principal components.

    Each output channel is min-max normalized to [0,1]; components beyond
    the covariance rank are zeroed with a warning.
    """
    fmap = np.asarray(feature_map, dtype=np.float64)
    if fmap.ndim != 3 or fmap.shape[2] < 3:
        raise ShapeError(f"feature map must be h x w x c with c >= 3, got {fmap.shape}")
    h, w, c = fmap.shape
    X = fmap.reshape(-1, c)
    Xc = X - X.mean(axis=0)
    _, svals, vt = np.linalg.svd(Xc, full_matrices=False)
    proj = Xc @ vt[:3].T
    out = np.zeros((h * w, 3))
    for i in range(3):
        if svals[i] <= 1e-12 * max(svals[0], 1e-300):
            warnings.warn(f"feature covariance rank < {i + 1}; channel {i} zeroed")
            continue
        ch = proj[:, i]
        lo, hi = ch.min(), ch.max()
        if hi - lo > 1e-300:
            out[:, i] = (ch - lo) / (hi - lo)
    return out.reshape(h, w, 3)
