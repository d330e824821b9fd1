"""Synthetic paste tampering: a donor region is pasted into the container."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from scipy import ndimage

from ..degradation import DegradationSpec, transmit

SHAPES = ("rectangle", "ellipse", "freeform")
AREA_TOLERANCE = 0.10


@dataclass
class TamperCase:
    container: torch.Tensor  # (3, H, W)
    donor: torch.Tensor
    mask: torch.Tensor  # (H, W) float 0/1
    degradation: DegradationSpec = DegradationSpec()
    shape: str = "rectangle"
    seed: int = 0

    def received(self) -> torch.Tensor:
        """The image a verifier sees: composed, then degraded. ``(3, H, W)``."""
        out = transmit(self.container[None], self.donor[None], self.mask, self.degradation)
        return out[0]

    @property
    def area(self) -> float:
        return float(self.mask.mean())


def _rectangle(h, w, area, rng):
    aspect = rng.uniform(0.5, 2.0)
    rh = int(round(np.sqrt(area * h * w * aspect)))
    # the width n / rh must fit, so rh >= area * h
    rh = int(np.clip(rh, max(1, int(np.ceil(area * h))), h))
    rw = int(np.clip(round(area * h * w / rh), 1, w))
    top = rng.integers(0, h - rh + 1)
    left = rng.integers(0, w - rw + 1)
    m = np.zeros((h, w), dtype=bool)
    m[top : top + rh, left : left + rw] = True
    return m


def _ellipse(h, w, area, rng):
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    aspect = rng.uniform(0.6, 1.6)
    # pi * a * b = area * h * w with a / b = aspect, then shrink until it fits
    b = np.sqrt(area * h * w / (np.pi * aspect))
    a = aspect * b
    a, b = min(a, h / 2), min(b, w / 2)
    cy = rng.uniform(a, h - a) if h > 2 * a else h / 2
    cx = rng.uniform(b, w - b) if w > 2 * b else w / 2
    m = ((yy - cy) / a) ** 2 + ((xx - cx) / b) ** 2 <= 1.0
    # fix up rounding so the area lands inside tolerance
    return _adjust_area(m, area, rng)


def _freeform(h, w, area, rng):
    field = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma=max(h, w) / 10, mode="wrap")
    thresh = np.quantile(field, 1.0 - area)
    return field >= thresh


def _adjust_area(m, area, rng):
    target = area * m.size
    for _ in range(64):
        frac = m.sum() / target
        if abs(frac - 1.0) <= AREA_TOLERANCE / 2:
            break
        m = ndimage.binary_dilation(m) if frac < 1 else ndimage.binary_erosion(m)
        if not m.any():
            break
    return m


_MAKERS = {"rectangle": _rectangle, "ellipse": _ellipse, "freeform": _freeform}


def make_mask(h, w, shape="rectangle", area_frac=0.25, seed=0) -> np.ndarray:
    if shape not in SHAPES:
        raise ValueError(f"shape must be one of {SHAPES}, got {shape!r}")
    if not 0.01 <= area_frac <= 0.9:
        raise ValueError("area_frac must be in [0.01, 0.9]")
    rng = np.random.default_rng(seed)
    return _MAKERS[shape](h, w, area_frac, rng)


def make_paste_tamper(container, donor, shape="rectangle", area_frac=0.25, seed=0,
                      degradation: DegradationSpec | None = None) -> TamperCase:
    """Paste a ``shape`` region of ``donor`` covering ``area_frac`` of the image into ``container``."""
    container, donor = torch.as_tensor(container), torch.as_tensor(donor)
    if container.shape != donor.shape or container.dim() != 3:
        raise ValueError(f"container {tuple(container.shape)} and donor {tuple(donor.shape)} must be equal (3, H, W)")
    h, w = container.shape[-2:]
    mask = make_mask(h, w, shape, area_frac, seed)
    return TamperCase(
        container, donor, torch.from_numpy(mask.astype(np.float32)).to(container.dtype),
        degradation or DegradationSpec(), shape, seed,
    )
