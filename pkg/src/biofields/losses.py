"""Training objectives for field reconstruction and biomass regression."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DataError


@dataclass
class LossWeights:
    alpha: float = 1.0     # color term
    beta: float = 0.1      # sparse-point geometry term
    eikonal: float = 0.0   # unit-gradient regularizer; 0 reproduces the plain objective

    def __post_init__(self):
        if min(self.alpha, self.beta, self.eikonal) < 0:
            raise ConfigError("loss weights must be non-negative")


def _mean_abs(t):
    if isinstance(t, Tensor):
        return ad.mean_(ad.absolute(t))
    return float(np.mean(np.abs(t)))


def neff_loss(color, feature, gt_color, gt_feature, sparse_sdf=None,
              weights=None, eikonal_grads=None):
    """Total field-training loss and its components.

    L_c and L_f are per-channel mean L1 over the ray batch; L_g is the mean
    |sdf| over the sparse supervision points. The total is
    L_f + alpha*L_c + beta*L_g, plus the optional eikonal term
    mean((|grad sdf| - 1)^2) when enabled.
    """
    weights = weights or LossWeights()
    gt_color = np.asarray(gt_color, dtype=np.float64)
    gt_feature = np.asarray(gt_feature, dtype=np.float64)
    if gt_color.shape[0] == 0:
        raise DataError("neff_loss: empty ray batch")
    if gt_color.min() < 0 or gt_color.max() > 1:
        raise DataError("neff_loss: ground-truth colors must lie in [0,1]")

    l_c = _mean_abs(color - Tensor(gt_color) if isinstance(color, Tensor) else color - gt_color)
    l_f = _mean_abs(feature - Tensor(gt_feature) if isinstance(feature, Tensor)
                    else feature - gt_feature)

    if sparse_sdf is None or (getattr(sparse_sdf, "size", 0) == 0):
        warnings.warn("neff_loss: no sparse points; geometry term is zero")
        l_g = Tensor(np.array(0.0)) if isinstance(color, Tensor) else 0.0
    else:
        l_g = _mean_abs(sparse_sdf)

    total = l_f + weights.alpha * l_c + weights.beta * l_g
    components = {
        "color": float(l_c.data) if isinstance(l_c, Tensor) else l_c,
        "feature": float(l_f.data) if isinstance(l_f, Tensor) else l_f,
        "geometry": float(l_g.data) if isinstance(l_g, Tensor) else l_g,
    }
    if eikonal_grads is not None and weights.eikonal > 0:
        l_e = eikonal_loss(eikonal_grads)
        total = total + weights.eikonal * l_e
        components["eikonal"] = float(l_e.data) if isinstance(l_e, Tensor) else l_e
    return total, components


def eikonal_loss(grads):
    """mean((|grad| - 1)^2) over spatial SDF gradients (k,3)."""
    if isinstance(grads, Tensor):
        norm = ad.sqrt(ad.sum_(grads * grads, axis=-1) + 1e-12)
        return ad.mean_((norm - 1.0) * (norm - 1.0))
    norm = np.sqrt((np.asarray(grads) ** 2).sum(axis=-1) + 1e-12)
    return float(np.mean((norm - 1.0) ** 2))


def smooth_l1(x, threshold=1.0):
    """0.5*x^2 inside |x| < threshold, |x| - 0.5*threshold outside."""
    if isinstance(x, Tensor):
        inside = Tensor((np.abs(x.data) < threshold).astype(np.float64))
        quad = 0.5 * x * x
        lin = ad.absolute(x) - 0.5 * threshold
        return inside * quad + (1.0 - inside) * lin
    x = np.asarray(x, dtype=np.float64)
    return np.where(np.abs(x) < threshold, 0.5 * x * x, np.abs(x) - 0.5 * threshold)


def biomass_loss(m_hat, m_true, threshold=1.0):
    """Log-regularized smooth-L1: mean smooth_l1((m_hat - m) / ln m).

    Ground truth must be in grams and strictly above 1 g so ln m > 0; the
    division makes a fixed absolute error cost less on heavier plots.
    """
    m_true = np.asarray(m_true, dtype=np.float64).reshape(-1)
    if m_true.size == 0:
        raise DataError("biomass_loss: empty batch")
    if np.any(m_true <= 1.0):
        raise DataError("biomass_loss: ground truth must be > 1 (expected grams)")
    inv_log = 1.0 / np.log(m_true)
    if isinstance(m_hat, Tensor):
        x = (ad.reshape(m_hat, (-1,)) - Tensor(m_true)) * Tensor(inv_log)
        return ad.mean_(smooth_l1(x, threshold))
    x = (np.asarray(m_hat, dtype=np.float64).reshape(-1) - m_true) * inv_log
    return float(np.mean(smooth_l1(x, threshold)))
