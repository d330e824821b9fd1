"""Transmission channel: tamper composition followed by a degradation operator.

All operators take NCHW tensors in ``[0, 1]`` and are differentiable in the
image (rounding and Poisson sampling pass gradients straight through).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

KINDS = ("clean", "gaussian", "poisson", "jpeg")

# ITU-T T.81 Annex K tables
LUMA_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)
CHROMA_TABLE = np.full((8, 8), 99.0)
CHROMA_TABLE[:4, :4] = [
    [17, 18, 24, 47],
    [18, 21, 26, 66],
    [24, 26, 56, 99],
    [47, 66, 99, 99],
]


@dataclass(frozen=True)
class DegradationSpec:
    """A channel degradation: ``clean``, ``gaussian`` (sigma in 8-bit units),
    ``poisson`` (level alpha) or ``jpeg`` (quality 1..100)."""

    kind: str = "clean"
    param: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown degradation kind {self.kind!r}")
        if self.kind == "gaussian" and self.param < 0:
            raise ValueError("gaussian sigma must be >= 0")
        if self.kind == "poisson" and self.param <= 0:
            raise ValueError("poisson alpha must be > 0")
        if self.kind == "jpeg" and not 1 <= self.param <= 100:
            raise ValueError("jpeg quality must be in [1, 100]")

    def to_text(self) -> str:
        return f"{self.kind}:{self.param:g}:{self.seed}"

    @classmethod
    def from_text(cls, text: str) -> "DegradationSpec":
        parts = text.strip().split(":")
        kind = parts[0]
        param = float(parts[1]) if len(parts) > 1 and parts[1] else 0.0
        seed = int(parts[2]) if len(parts) > 2 and parts[2] else 0
        return cls(kind, param, seed)

    def apply(self, x: torch.Tensor) -> torch.Tensor:
        if self.kind == "clean":
            return x
        if self.kind == "gaussian":
            return gaussian_noise(x, self.param, self.seed)
        if self.kind == "poisson":
            return poisson_noise(x, self.param, self.seed)
        return jpeg_simulate(x, self.param)


def _generator(seed):
    return torch.Generator().manual_seed(int(seed))


def straight_through(forward_value, x):
    """``forward_value`` in the forward pass, identity gradient w.r.t. ``x``."""
    return x + (forward_value - x).detach()


def gaussian_noise(x, sigma, seed=0):
    if sigma == 0:
        return x
    noise = torch.randn(x.shape, generator=_generator(seed), dtype=x.dtype)
    return x + noise * (sigma / 255.0)


def poisson_scale(alpha):
    return 255.0 / alpha


def poisson_noise(x, alpha, seed=0):
    """Shot noise ``Poisson(x * s) / s`` with ``s = 255 / alpha``."""
    s = poisson_scale(alpha)
    rate = (x.detach() * s).clamp_min(0)
    sample = torch.poisson(rate, generator=_generator(seed)) / s
    return straight_through(sample.to(x.dtype), x)


def round_ste(x):
    return straight_through(torch.round(x), x)


def quality_scale(quality):
    q = int(round(quality))
    if not 1 <= q <= 100:
        raise ValueError(f"jpeg quality must be in [1, 100], got {quality}")
    return 5000.0 / q if q < 50 else 200.0 - 2.0 * q


def quantization_tables(quality):
    """IJG quality-scaled (luma, chroma) tables, entries clipped to ``[1, 255]``."""
    scale = quality_scale(quality)
    tables = [np.clip(np.floor((t * scale + 50.0) / 100.0), 1, 255) for t in (LUMA_TABLE, CHROMA_TABLE)]
    return tuple(tables)


def dct_matrix(n=8, dtype=torch.float64):
    k = torch.arange(n, dtype=dtype)[:, None]
    i = torch.arange(n, dtype=dtype)[None, :]
    m = torch.cos((2 * i + 1) * k * math.pi / (2 * n)) * math.sqrt(2.0 / n)
    m[0] = m[0] / math.sqrt(2.0)
    return m


def _blocks(x):
    # (N, C, H, W) -> (N, C, H/8, W/8, 8, 8)
    n, c, h, w = x.shape
    return x.reshape(n, c, h // 8, 8, w // 8, 8).permute(0, 1, 2, 4, 3, 5)


def _unblocks(b):
    n, c, hb, wb, _, _ = b.shape
    return b.permute(0, 1, 2, 4, 3, 5).reshape(n, c, hb * 8, wb * 8)


def block_dct(x):
    d = dct_matrix(dtype=x.dtype)
    return d @ _blocks(x) @ d.T


def block_idct(coef):
    d = dct_matrix(dtype=coef.dtype)
    return _unblocks(d.T @ coef @ d)


def quantize_coefficients(coef, table):
    """Quantized integer levels ``round(coef / table)`` (straight-through rounding)."""
    t = torch.as_tensor(table, dtype=coef.dtype)
    return round_ste(coef / t)


def rgb_to_ycbcr(x):
    # JFIF full-range, 8-bit scale
    r, g, b = (x[:, i : i + 1] * 255.0 for i in range(3))
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0
    return y, cb, cr


def ycbcr_to_rgb(y, cb, cr):
    cb = cb - 128.0
    cr = cr - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return torch.cat([r, g, b], dim=1) / 255.0


def _jpeg_plane(plane, table):
    coef = block_dct(plane - 128.0)
    t = torch.as_tensor(table, dtype=plane.dtype)
    return block_idct(quantize_coefficients(coef, table) * t) + 128.0


def jpeg_simulate(x, quality):
    """Differentiable JPEG: YCbCr, 4:2:0 chroma, 8x8 DCT, quantize/dequantize, inverse.

    Inputs whose sides are not multiples of 16 are reflect-padded and cropped back.
    """
    luma_t, chroma_t = quantization_tables(quality)
    h, w = x.shape[-2:]
    ph, pw = (-h) % 16, (-w) % 16
    if ph or pw:
        mode = "reflect" if ph < h and pw < w else "replicate"
        x = F.pad(x, (0, pw, 0, ph), mode=mode)
    y, cb, cr = rgb_to_ycbcr(x)
    y = _jpeg_plane(y, luma_t)
    cb = _jpeg_plane(F.avg_pool2d(cb, 2), chroma_t)
    cr = _jpeg_plane(F.avg_pool2d(cr, 2), chroma_t)
    cb = F.interpolate(cb, scale_factor=2, mode="bilinear", align_corners=False)
    cr = F.interpolate(cr, scale_factor=2, mode="bilinear", align_corners=False)
    out = ycbcr_to_rgb(y, cb, cr).clamp(0.0, 1.0)
    return out[..., :h, :w]


def check_mask(mask):
    if not torch.all((mask == 0) | (mask == 1)):
        raise ValueError("tamper mask must be binary")


def transmit(i_con, tampered, mask, spec: DegradationSpec | None = None):
    """``D(i_con * (1 - M) + tampered * M)``: compose first, then degrade."""
    if i_con.shape != tampered.shape:
        raise ValueError(f"container {tuple(i_con.shape)} and tampered {tuple(tampered.shape)} differ")
    mask = torch.as_tensor(mask, dtype=i_con.dtype)
    if mask.shape[-2:] != i_con.shape[-2:]:
        raise ValueError(f"mask {tuple(mask.shape)} does not match image {tuple(i_con.shape)}")
    check_mask(mask)
    if mask.dim() == 2:
        mask = mask[None, None]
    elif mask.dim() == 3:
        mask = mask[:, None]
    composed = i_con * (1 - mask) + tampered * mask
    return (spec or DegradationSpec()).apply(composed)


@dataclass
class RandomDegradation:
    """Uniform choice of kind, then a uniform parameter within the kind's range."""

    kinds: tuple = ("gaussian", "poisson", "jpeg", "clean")
    sigma_range: tuple = (0.0, 5.0)
    alpha_range: tuple = (2.0, 4.0)
    quality_range: tuple = (70, 95)

    def sample(self, rng: np.random.Generator) -> DegradationSpec:
        kind = self.kinds[rng.integers(len(self.kinds))]
        seed = int(rng.integers(2**31 - 1))
        if kind == "gaussian":
            return DegradationSpec(kind, float(rng.uniform(*self.sigma_range)), seed)
        if kind == "poisson":
            return DegradationSpec(kind, float(rng.uniform(*self.alpha_range)), seed)
        if kind == "jpeg":
            lo, hi = self.quality_range
            return DegradationSpec(kind, float(rng.integers(lo, hi + 1)), seed)
        return DegradationSpec("clean", 0.0, seed)


def sample_random_degradation(seed, sampler: RandomDegradation | None = None) -> DegradationSpec:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return (sampler or RandomDegradation()).sample(rng)
