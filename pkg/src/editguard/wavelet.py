"""Single-level orthonormal Haar wavelet transform.

Tensors are channel-first, ``(..., C, H, W)``. The forward transform returns
``(..., 4C, H/2, W/2)`` with the sub-bands stacked band-major::

    [LL(C channels), LH(C channels), HL(C channels), HH(C channels)]

For a 2x2 block ``[[a, b], [c, d]]`` the coefficients are::

    LL = (a + b + c + d) / 2
    LH = (a - b + c - d) / 2     # detail across columns
    HL = (a + b - c - d) / 2     # detail across rows
    HH = (a - b - c + d) / 2

The analysis matrix is a scaled 4x4 Hadamard matrix, which is orthogonal and
symmetric, so it is its own inverse and the transform preserves energy. The
band order is part of the checkpoint format; changing it breaks saved models.
"""
from __future__ import annotations

import numpy as np
import torch

SUBBAND_ORDER = ("LL", "LH", "HL", "HH")

# rows: LL, LH, HL, HH; columns: a, b, c, d (row-major 2x2 block)
HAAR_MATRIX = 0.5 * np.array(
    [
        [1.0, 1.0, 1.0, 1.0],
        [1.0, -1.0, 1.0, -1.0],
        [1.0, 1.0, -1.0, -1.0],
        [1.0, -1.0, -1.0, 1.0],
    ]
)


class DimensionError(ValueError):
    """Raised when a tensor cannot be wavelet transformed as given."""


def dwt(x: torch.Tensor) -> torch.Tensor:
    if x.dim() < 3:
        raise DimensionError(f"expected (..., C, H, W), got shape {tuple(x.shape)}")
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise DimensionError(f"spatial dims must be even, got {h}x{w}")
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    ll = (a + b + c + d) * 0.5
    lh = (a - b + c - d) * 0.5
    hl = (a + b - c - d) * 0.5
    hh = (a - b - c + d) * 0.5
    return torch.cat([ll, lh, hl, hh], dim=-3)


def idwt(feature: torch.Tensor) -> torch.Tensor:
    if feature.dim() < 3:
        raise DimensionError(f"expected (..., 4C, H, W), got shape {tuple(feature.shape)}")
    ch = feature.shape[-3]
    if ch % 4:
        raise DimensionError(f"channel count must be divisible by 4, got {ch}")
    ll, lh, hl, hh = torch.chunk(feature, 4, dim=-3)
    a = (ll + lh + hl + hh) * 0.5
    b = (ll - lh + hl - hh) * 0.5
    c = (ll + lh - hl - hh) * 0.5
    d = (ll - lh - hl + hh) * 0.5
    *lead, c_out, h, w = a.shape
    out = a.new_empty(*lead, c_out, 2 * h, 2 * w)
    out[..., 0::2, 0::2] = a
    out[..., 0::2, 1::2] = b
    out[..., 1::2, 0::2] = c
    out[..., 1::2, 1::2] = d
    return out
