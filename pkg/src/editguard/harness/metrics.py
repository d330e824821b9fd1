"""Localization, bit and image-quality metrics.

Masks are binary arrays with 1 marking tampered pixels. All functions take
numpy arrays or torch tensors and return Python floats.
"""
from __future__ import annotations

import math

import numpy as np


def _np(x):
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    return np.asarray(x)


def _binary_pair(pred, gt):
    pred, gt = _np(pred), _np(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    return pred.astype(bool), gt.astype(bool)


def confusion(pred, gt):
    """``(tp, fp, fn, tn)`` pixel counts."""
    p, g = _binary_pair(pred, gt)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return tp, fp, fn, p.size - tp - fp - fn


def f1(pred, gt) -> float:
    """Pixel F1. Two empty masks agree perfectly and score 1."""
    tp, fp, fn, _ = confusion(pred, gt)
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2 * tp / denom


def iou(pred, gt) -> float:
    tp, fp, fn, _ = confusion(pred, gt)
    union = tp + fp + fn
    return 1.0 if union == 0 else tp / union


def auc(score, gt):
    """ROC AUC of a per-pixel score map against the ground-truth mask.

    With a single-class ground truth the AUC is undefined; returns 1.0 when
    the scores are constant (nothing to rank wrongly) and ``None`` otherwise.
    """
    from sklearn.metrics import roc_auc_score

    score, gt = _np(score).ravel(), _np(gt).astype(bool).ravel()
    if score.shape != gt.shape:
        raise ValueError("score map and mask differ in size")
    if gt.all() or not gt.any():
        return 1.0 if np.ptp(score) == 0 else None
    return float(roc_auc_score(gt, score))


def bit_accuracy(a, b) -> float:
    a, b = _np(a).astype(np.int64), _np(b).astype(np.int64)
    if a.shape != b.shape:
        raise ValueError(f"bit arrays differ in shape: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("empty bit arrays")
    return float(np.count_nonzero(a == b)) / a.size


def psnr(x, y, data_range=1.0) -> float:
    x, y = _np(x).astype(np.float64), _np(y).astype(np.float64)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    return math.inf if mse == 0 else 10.0 * math.log10(data_range**2 / mse)


def ssim(x, y, data_range=1.0) -> float:
    """Gaussian-window SSIM (sigma 1.5, K1 0.01, K2 0.03), channels averaged.

    Accepts ``(H, W)``, ``(H, W, C)`` or ``(C, H, W)`` with ``C == 3``.
    """
    from skimage.metrics import structural_similarity

    x, y = _np(x).astype(np.float64), _np(y).astype(np.float64)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    if x.ndim == 3 and x.shape[0] == 3 and x.shape[-1] != 3:
        x, y = np.moveaxis(x, 0, -1), np.moveaxis(y, 0, -1)
    return float(structural_similarity(
        x, y, data_range=data_range, gaussian_weights=True, sigma=1.5,
        use_sample_covariance=False, K1=0.01, K2=0.03,
        channel_axis=-1 if x.ndim == 3 else None,
    ))


def mask_density(mask) -> float:
    m = _np(mask)
    return float(np.count_nonzero(m)) / m.size if m.size else 0.0
