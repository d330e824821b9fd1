"""Invertible image hiding / revealing network.

One stack of coupling blocks is run forward to hide a localization watermark
inside an image (IHM) and backward to reveal it again (IRM). Both branches
live in the Haar wavelet domain, so a 3-channel image becomes 12 channels at
half resolution.
"""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .wavelet import dwt, idwt

EXP_CLAMP = 2.0


class NumericError(FloatingPointError):
    """Non-finite values appeared inside the coupling stack."""

    def __init__(self, message, block=None):
        super().__init__(message)
        self.block = block


def soft_clamp(s: torch.Tensor, bound: float = EXP_CLAMP) -> torch.Tensor:
    # smooth clamp into (-bound, bound); keeps gradients alive unlike a hard clip
    return bound * torch.tanh(s / bound)


class LayerNorm2d(nn.Module):
    """LayerNorm over the channel axis of an NCHW tensor."""

    def __init__(self, channels, eps=1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x):
        mu = x.mean(1, keepdim=True)
        var = (x - mu).pow(2).mean(1, keepdim=True)
        y = (x - mu) / torch.sqrt(var + self.eps)
        return self.weight[:, None, None] * y + self.bias[:, None, None]


class SimpleGate(nn.Module):
    def forward(self, x):
        x1, x2 = x.chunk(2, dim=1)
        return x1 * x2


class LFIM(nn.Module):
    """Lightweight feature interaction module.

    Two normalizations, a depthwise 3x3 convolution, a multiplicative gate,
    simplified channel attention and four 1x1 convolutions. Both residual
    branches are scaled by parameters that start at zero, so a fresh module
    is the identity.
    """

    def __init__(self, channels, expand=2):
        super().__init__()
        hidden = channels * expand
        self.norm1 = LayerNorm2d(channels)
        self.expand = nn.Conv2d(channels, hidden, 1)
        self.dwconv = nn.Conv2d(hidden, hidden, 3, padding=1, groups=hidden)
        self.gate = SimpleGate()
        self.sca = nn.Sequential(nn.AdaptiveAvgPool2d(1), nn.Conv2d(hidden // 2, hidden // 2, 1))
        self.project = nn.Conv2d(hidden // 2, channels, 1)

        self.norm2 = LayerNorm2d(channels)
        self.ffn_expand = nn.Conv2d(channels, hidden, 1)
        self.ffn_project = nn.Conv2d(hidden // 2, channels, 1)

        self.beta = nn.Parameter(torch.zeros(1, channels, 1, 1))
        self.gamma = nn.Parameter(torch.zeros(1, channels, 1, 1))

    def forward(self, x):
        y = self.dwconv(self.expand(self.norm1(x)))
        y = self.gate(y)
        y = y * self.sca(y)
        x = x + self.beta * self.project(y)

        y = self.gate(self.ffn_expand(self.norm2(x)))
        return x + self.gamma * self.ffn_project(y)


class DenseBlock(nn.Module):
    """Five 3x3 convolutions, each fed the concatenation of everything before it."""

    def __init__(self, in_ch, out_ch, width=32, depth=5):
        super().__init__()
        self.convs = nn.ModuleList()
        ch = in_ch
        for _ in range(depth - 1):
            self.convs.append(nn.Conv2d(ch, width, 3, padding=1))
            ch += width
        self.last = nn.Conv2d(ch, out_ch, 3, padding=1)
        nn.init.zeros_(self.last.weight)
        nn.init.zeros_(self.last.bias)

    def forward(self, x):
        feats = [x]
        for conv in self.convs:
            feats.append(F.leaky_relu(conv(torch.cat(feats, 1)), 0.2))
        return self.last(torch.cat(feats, 1))


class Transform(nn.Module):
    """One enhanced coupling transform: LFIM followed by a dense block."""

    def __init__(self, channels, width=32, expand=2, use_lfim=True):
        super().__init__()
        self.lfim = LFIM(channels, expand) if use_lfim else nn.Identity()
        self.dense = DenseBlock(channels, channels, width)

    def forward(self, x):
        return self.dense(self.lfim(x))


class CouplingBlock(nn.Module):
    """Enhanced affine coupling between the image and watermark branches.

    forward:
        h_ori' = h_ori + conv(phi1(h_loc))
        h_loc' = h_loc * exp(clamp(phi2(h_ori'))) + phi3(h_ori')
    backward:
        h_loc = (h_loc' - phi3(h_ori')) * exp(-clamp(phi2(h_ori')))
        h_ori = h_ori' - conv(phi1(h_loc))
    """

    def __init__(self, channels=12, width=32, expand=2, use_lfim=True):
        super().__init__()
        self.phi1 = Transform(channels, width, expand, use_lfim)
        self.phi2 = Transform(channels, width, expand, use_lfim)
        self.phi3 = Transform(channels, width, expand, use_lfim)
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)
        nn.init.zeros_(self.conv.bias)

    def forward(self, h_ori, h_loc):
        h_ori = h_ori + self.conv(self.phi1(h_loc))
        s = soft_clamp(self.phi2(h_ori))
        h_loc = h_loc * torch.exp(s) + self.phi3(h_ori)
        return h_ori, h_loc

    def inverse(self, h_ori, h_loc):
        s = soft_clamp(self.phi2(h_ori))
        h_loc = (h_loc - self.phi3(h_ori)) * torch.exp(-s)
        h_ori = h_ori - self.conv(self.phi1(h_loc))
        return h_ori, h_loc


def _check_finite(index, *tensors):
    for t in tensors:
        if not torch.isfinite(t).all():
            raise NumericError(f"non-finite values after coupling block {index}", block=index)


class InvertibleCodec(nn.Module):
    """Stack of ``n_blocks`` coupling blocks shared by hiding and revealing.

    Args:
        n_blocks: number of coupling blocks (6 in the full-size model).
        width: internal width of each dense block.
        expand: channel expansion ratio inside LFIM.
        use_lfim: drop LFIM from every transform when False (ablation).
        check_finite: validate every block output; costs a sync per block.
    """

    channels = 12

    def __init__(self, n_blocks=6, width=32, expand=2, use_lfim=True, check_finite=False):
        super().__init__()
        self.n_blocks = n_blocks
        self.width = width
        self.expand = expand
        self.blocks = nn.ModuleList(
            CouplingBlock(self.channels, width, expand, use_lfim) for _ in range(n_blocks)
        )
        self.check_finite = check_finite

    def forward(self, h_ori, h_loc):
        for k, block in enumerate(self.blocks):
            h_ori, h_loc = block(h_ori, h_loc)
            if self.check_finite:
                _check_finite(k, h_ori, h_loc)
        return h_ori, h_loc

    def inverse(self, h_ori, h_loc):
        for k in reversed(range(self.n_blocks)):
            h_ori, h_loc = self.blocks[k].inverse(h_ori, h_loc)
            if self.check_finite:
                _check_finite(k, h_ori, h_loc)
        return h_ori, h_loc

    def hide(self, i_ori, w_loc):
        """Hide ``w_loc`` in ``i_ori``; returns ``(i_med, z)``.

        ``z`` is the watermark-branch output that a real encoder throws away.
        ``i_med`` is not clamped or quantized here.
        """
        if i_ori.shape != w_loc.shape:
            raise ValueError(f"image {tuple(i_ori.shape)} and watermark {tuple(w_loc.shape)} differ")
        h_ori, z = self(dwt(i_ori), dwt(w_loc))
        return idwt(h_ori), z

    def reveal(self, i_rec, z_hat):
        """Run the stack backwards from ``(dwt(i_rec), z_hat)``.

        Returns ``(i_ori_hat, w_loc_hat)``.
        """
        h = dwt(i_rec)
        if z_hat.shape != h.shape:
            raise ValueError(f"lost-information tensor {tuple(z_hat.shape)} does not match {tuple(h.shape)}")
        h_ori, h_loc = self.inverse(h, z_hat)
        return idwt(h_ori), idwt(h_loc)
