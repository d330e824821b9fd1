"""Input checks shared by the estimator and the command line."""
from __future__ import annotations

import numpy as np
import torch


class DataError(ValueError):
    """Inputs have the wrong shape, type or range."""


def check_images(X, size=None):
    """Coerce an image batch to float NCHW in ``[0, 1]``.

    Accepts uint8 ``(N, H, W, 3)`` / ``(H, W, 3)`` arrays, or float
    ``(N, 3, H, W)`` / ``(3, H, W)`` arrays or tensors already in ``[0, 1]``.
    Returns ``(tensor, channels_last)``; the flag records the input layout
    so outputs can be returned in kind.
    """
    if isinstance(X, (list, tuple)):
        X = np.stack([np.asarray(x) for x in X])
    arr = X.detach().cpu() if torch.is_tensor(X) else torch.from_numpy(np.ascontiguousarray(X))
    if arr.dim() == 3:
        arr = arr[None]
    if arr.dim() != 4:
        raise DataError(f"expected a batch of RGB images, got shape {tuple(arr.shape)}")
    channels_last = arr.shape[-1] == 3 and arr.shape[1] != 3
    if channels_last:
        arr = arr.permute(0, 3, 1, 2)
    if arr.shape[1] != 3:
        raise DataError(f"images must have 3 channels, got shape {tuple(arr.shape)}")
    if arr.dtype == torch.uint8:
        arr = arr.float() / 255.0
    elif arr.is_floating_point():
        arr = arr.float()
        if not torch.isfinite(arr).all():
            raise DataError("images contain NaN or inf")
        if arr.min() < 0 or arr.max() > 1:
            raise DataError("float images must lie in [0, 1]")
    else:
        raise DataError(f"unsupported image dtype {arr.dtype}")
    if len(arr) == 0:
        raise DataError("empty image batch")
    h, w = arr.shape[-2:]
    if h % 2 or w % 2:
        raise DataError(f"image sides must be even, got {h}x{w}")
    if size is not None and (h, w) != (size, size):
        raise DataError(f"expected {size}x{size} images, got {h}x{w}")
    return arr.contiguous(), channels_last


def restore_layout(x: torch.Tensor, channels_last: bool):
    """Inverse of :func:`check_images`: uint8 NHWC numpy for NHWC input, float NCHW tensor otherwise."""
    if channels_last:
        return np.round(x.detach().clamp(0, 1).permute(0, 2, 3, 1).numpy() * 255.0).astype(np.uint8)
    return x


def check_bits(bits, n_bits, n=None):
    b = torch.as_tensor(np.asarray(bits))
    if b.dim() == 1:
        b = b[None]
    if b.dim() != 2 or b.shape[-1] != n_bits:
        raise DataError(f"expected payloads of {n_bits} bits, got shape {tuple(b.shape)}")
    if not torch.all((b == 0) | (b == 1)):
        raise DataError("payload bits must be 0 or 1")
    if n is not None and len(b) not in (1, n):
        raise DataError(f"got {len(b)} payloads for {n} images")
    return b.to(torch.int64)


def check_masks(masks, shape):
    m = np.asarray(masks)
    if m.ndim == 2:
        m = m[None]
    if m.shape[-2:] != tuple(shape[-2:]):
        raise DataError(f"mask shape {m.shape} does not match images {tuple(shape)}")
    if not np.isin(m, (0, 1)).all():
        m = (m > 127).astype(np.uint8) if m.max() > 1 else m
        if not np.isin(m, (0, 1)).all():
            raise DataError("masks must be binary")
    return m.astype(np.uint8)
