"""Gradient attribution of revealed-watermark pixels to the received image.

The map for a point set ``S`` is ``|(1/|S|) sum_{(i,j) in S} dW_hat[i,j] / dX|``,
summed over the three watermark channels and reduced to one value per input
pixel by summing absolute values over input channels. A locality check then
compares the attribution mass near ``S`` with the mass far from it.
"""
from __future__ import annotations

import numpy as np
import torch
from scipy import ndimage

from ..model import IBSN


def point_set(center, size=7):
    """``size x size`` block of ``(row, col)`` points centred on ``center``."""
    r0, c0 = center[0] - size // 2, center[1] - size // 2
    return [(r0 + i, c0 + j) for i in range(size) for j in range(size)]


def attribution_map(model: IBSN, i_rec, points) -> np.ndarray:
    """``(H, W)`` attribution of the revealed watermark at ``points`` to ``i_rec``."""
    if not points:
        raise ValueError("point set is empty")
    x = torch.as_tensor(i_rec).float()
    if x.dim() == 3:
        x = x[None]
    if len(x) != 1:
        raise ValueError("attribution_map takes a single image")
    model.eval()
    x = x.clone().requires_grad_(True)
    _, w_hat, _ = model.decode(x)
    rows = torch.tensor([p[0] for p in points])
    cols = torch.tensor([p[1] for p in points])
    target = w_hat[0][:, rows, cols].sum() / len(points)
    (grad,) = torch.autograd.grad(target, x)
    return grad[0].abs().sum(0).numpy()


def window_mass(attr, size=15):
    """Sum of ``attr`` over the ``size x size`` window centred at every pixel (zero outside)."""
    kernel = np.ones((size, size))
    return ndimage.convolve(np.asarray(attr, dtype=np.float64), kernel, mode="constant", cval=0.0)


def locality(attr, center, size=15, min_distance=32):
    """``(inside, best_far)``: window mass at ``center`` and the largest mass of
    any window centred at least ``min_distance`` pixels away (Euclidean)."""
    mass = window_mass(attr, size)
    h, w = mass.shape
    yy, xx = np.mgrid[0:h, 0:w]
    far = np.hypot(yy - center[0], xx - center[1]) >= min_distance
    if not far.any():
        raise ValueError("no window lies min_distance away from center")
    return float(mass[center]), float(mass[far].max())


def random_centers(n, h, w, seed=0, margin=3):
    rng = np.random.default_rng(seed)
    return [(int(rng.integers(margin, h - margin)), int(rng.integers(margin, w - margin))) for _ in range(n)]


def locality_trials(model: IBSN, i_rec, n=10, seed=0, set_size=7, window=15, min_distance=32):
    """Per-trial records for ``n`` random point sets on one received image."""
    h, w = torch.as_tensor(i_rec).shape[-2:]
    out = []
    for center in random_centers(n, h, w, seed, margin=set_size // 2):
        attr = attribution_map(model, i_rec, point_set(center, set_size))
        inside, far = locality(attr, center, window, min_distance)
        out.append({"center": list(center), "inside": inside, "far_max": far, "local": inside > far})
    return out
