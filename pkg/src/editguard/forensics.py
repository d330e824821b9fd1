"""Dual-watermark embedding, tamper localization, copyright extraction and the verdict.

All functions take a trained :class:`~editguard.model.IBSN` and NCHW float
images in ``[0, 1]`` (a single ``(3, H, W)`` image is accepted too).
Inference runs in eval mode without gradients.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage

from .bitcodec import ConfigurationError, bits_to_signal, signal_to_bits
from .model import IBSN, pure_blue

DEFAULT_TAU = 0.2
DEFAULT_THETA_BITS = 0.90
DEFAULT_THETA_MASK = 0.01


class Case(str, enum.Enum):
    """Verdict classes, in the order they are checked."""

    COPYRIGHT_MISMATCH = "copyright_mismatch"  # not ours, or destroyed beyond recovery
    TAMPERED = "tampered"
    CLEAN = "clean"


@dataclass
class ForensicVerdict:
    case: Case
    copyright_bits: np.ndarray
    bit_agreement: float
    mask: np.ndarray
    mask_density: float

    def to_record(self) -> dict:
        return {
            "case": self.case.value,
            "bit_agreement": self.bit_agreement,
            "mask_density": self.mask_density,
            "payload_hex": bits_to_hex(self.copyright_bits),
        }


def bits_to_hex(bits) -> str:
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    pad = (-len(bits)) % 8
    return np.packbits(np.concatenate([bits, np.zeros(pad, np.uint8)])).tobytes().hex()


def _batch(x):
    x = torch.as_tensor(x)
    if x.dim() == 3:
        x = x[None]
    if x.dim() != 4 or x.shape[1] != 3:
        raise ValueError(f"expected (N, 3, H, W) or (3, H, W) images, got {tuple(x.shape)}")
    if x.shape[-1] % 2 or x.shape[-2] % 2:
        raise ValueError(f"image sides must be even, got {tuple(x.shape[-2:])}")
    return x.float()


def localization_watermark(shape, watermark=None) -> torch.Tensor:
    """The shared localization watermark at ``shape`` (NCHW).

    ``None`` means pure blue, synthesized at the requested size; an image is
    resized bilinearly.
    """
    if watermark is None:
        return pure_blue(shape)
    w = _batch(watermark)
    if w.shape[-2:] != tuple(shape[-2:]):
        w = F.interpolate(w, size=tuple(shape[-2:]), mode="bilinear", align_corners=False)
    return w.expand(shape[0], -1, -1, -1)


def quantize_8bit(x):
    return torch.round(x.clamp(0, 1) * 255.0) / 255.0


def _check_geometry(model: IBSN, x):
    size = model.config.image_size
    if tuple(x.shape[-2:]) != (size, size):
        raise ConfigurationError(f"model trained for {size}x{size} images, got {tuple(x.shape[-2:])}")


@torch.no_grad()
def embed(model: IBSN, i_ori, bits, watermark=None, quantize=True):
    """Hide the localization watermark, then the copyright bits; returns the container."""
    model.eval()
    x = _batch(i_ori)
    _check_geometry(model, x)
    bits = torch.as_tensor(bits)
    if bits.dim() == 1:
        bits = bits[None].expand(len(x), -1)
    i_con, _ = model.encode(x, localization_watermark(x.shape, watermark), bits_to_signal(bits))
    return quantize_8bit(i_con) if quantize else i_con.clamp(0, 1)


@torch.no_grad()
def reveal(model: IBSN, i_rec):
    """``(i_ori_hat, w_loc_hat, bit_signal)`` for a received image."""
    model.eval()
    x = _batch(i_rec)
    _check_geometry(model, x)
    return model.decode(x)


def residual_map(w_loc_hat, w_loc):
    """Channel-max absolute difference, ``(N, H, W)``."""
    return (torch.as_tensor(w_loc_hat) - torch.as_tensor(w_loc)).abs().amax(dim=-3)


def threshold_mask(residual, tau=DEFAULT_TAU):
    """1 where ``residual >= tau``."""
    return (torch.as_tensor(residual) >= tau).to(torch.uint8)


def cleanup_mask(mask, iterations=1):
    """Optional morphological opening then closing per image."""
    arr = np.asarray(mask, dtype=bool)
    out = np.empty_like(arr)
    square = np.ones((3, 3), dtype=bool)
    for i in range(len(arr)):
        m = ndimage.binary_opening(arr[i], square, iterations=iterations)
        out[i] = ndimage.binary_closing(m, square, iterations=iterations, border_value=0)
    return torch.from_numpy(out.astype(np.uint8))


def locate(model: IBSN, i_rec, watermark=None, tau=DEFAULT_TAU, cleanup=False, return_residual=False):
    """Predicted tamper mask ``(N, H, W)`` uint8 for a received image."""
    _, w_hat, _ = reveal(model, i_rec)
    residual = residual_map(w_hat, localization_watermark(w_hat.shape, watermark))
    mask = threshold_mask(residual, tau)
    if cleanup:
        mask = cleanup_mask(mask)
    return (mask, residual) if return_residual else mask


def extract_copyright(model: IBSN, i_rec):
    """Recovered payload bits ``(N, L)`` uint8."""
    model.eval()
    x = _batch(i_rec)
    _check_geometry(model, x)
    with torch.no_grad():
        return signal_to_bits(model.brm(x))


def adjudicate(w_hat, w_ref, mask, theta_bits=DEFAULT_THETA_BITS, theta_mask=DEFAULT_THETA_MASK) -> ForensicVerdict:
    """Copyright first, then tampering; anything else is clean."""
    w_hat = np.asarray(w_hat, dtype=np.uint8).ravel()
    w_ref = np.asarray(w_ref, dtype=np.uint8).ravel()
    if w_hat.shape != w_ref.shape:
        raise ValueError(f"payload lengths differ: {w_hat.size} vs {w_ref.size}")
    mask = np.asarray(mask, dtype=np.uint8)
    agreement = float(np.mean(w_hat == w_ref)) if w_ref.size else 1.0
    density = float(mask.mean()) if mask.size else 0.0
    if agreement < theta_bits:
        case = Case.COPYRIGHT_MISMATCH
    elif density >= theta_mask:
        case = Case.TAMPERED
    else:
        case = Case.CLEAN
    return ForensicVerdict(case, w_hat, agreement, mask, density)


def verify(model: IBSN, i_rec, w_ref, watermark=None, tau=DEFAULT_TAU, theta_bits=DEFAULT_THETA_BITS,
           theta_mask=DEFAULT_THETA_MASK, cleanup=False) -> ForensicVerdict:
    """Locate and extract on a single received image, then adjudicate."""
    x = _batch(i_rec)
    if len(x) != 1:
        raise ValueError("verify takes a single image")
    _, w_hat, signal = reveal(model, x)
    mask = threshold_mask(residual_map(w_hat, localization_watermark(w_hat.shape, watermark)), tau)
    if cleanup:
        mask = cleanup_mask(mask)
    return adjudicate(signal_to_bits(signal)[0].numpy(), w_ref, mask[0].numpy(), theta_bits, theta_mask)
