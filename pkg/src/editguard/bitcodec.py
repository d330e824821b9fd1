"""Bit encryption (BEM) and bit recovery (BRM) networks for the copyright payload.

Bits ``{0, 1}`` are carried internally as the signal ``{-0.5, +0.5}``. The
payload is zero-padded (in signal space) to the next perfect square ``S*S``
so it can be reshaped into ``S x S`` message maps; padded positions are
dropped again at decode time.
"""
from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


class ConfigurationError(ValueError):
    """Payload length or image geometry does not match the trained network."""


def map_side(n_bits: int) -> int:
    return math.isqrt(n_bits - 1) + 1 if n_bits > 0 else 0


def bits_to_signal(bits) -> torch.Tensor:
    bits = torch.as_tensor(bits)
    if bits.numel() and not torch.all((bits == 0) | (bits == 1)):
        raise ValueError("bits must be 0 or 1")
    return bits.to(torch.get_default_dtype()) - 0.5


def signal_to_bits(signal: torch.Tensor) -> torch.Tensor:
    return (signal > 0).to(torch.uint8)


def random_bits(n, n_bits, generator=None):
    return torch.randint(0, 2, (n, n_bits), generator=generator)


def _pad_signal(signal, side):
    pad = side * side - signal.shape[-1]
    return F.pad(signal, (0, pad)) if pad else signal


def _mlp(n_in, hidden, n_out):
    return nn.Sequential(
        nn.Linear(n_in, hidden), nn.ReLU(inplace=True),
        nn.Linear(hidden, hidden), nn.ReLU(inplace=True),
        nn.Linear(hidden, n_out),
    )


class ShortcutMLP(nn.Module):
    """Two-hidden-layer ReLU MLP plus a linear bypass.

    The MLP's last layer starts at zero, so a fresh module is a plain linear
    map; a randomly initialized ReLU stack here swamps the readout with noise
    and training stalls at chance.
    """

    def __init__(self, n_in, hidden, n_out):
        super().__init__()
        self.mlp = _mlp(n_in, hidden, n_out)
        self.skip = nn.Linear(n_in, n_out)

    def reset_tail(self):
        nn.init.zeros_(self.mlp[-1].weight)
        nn.init.zeros_(self.mlp[-1].bias)

    def forward(self, x):
        return self.skip(x) + self.mlp(x)


def conv_relu(cin, cout, stride=1):
    return nn.Sequential(nn.Conv2d(cin, cout, 3, stride=stride, padding=1), nn.ReLU(inplace=True))


def relu_init_(module: nn.Module):
    """He-normal weights and zero biases for every conv/linear layer.

    The framework default shrinks activations by roughly 2x per ReLU layer;
    through the ~20 layers of these U-nets the message vanishes entirely.
    """
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
    for m in module.modules():
        if isinstance(m, ShortcutMLP):
            m.reset_tail()


class SqueezeExcite(nn.Module):
    def __init__(self, channels, reduction=4):
        super().__init__()
        mid = max(channels // reduction, 4)
        self.fc = nn.Sequential(
            nn.AdaptiveAvgPool2d(1),
            nn.Conv2d(channels, mid, 1), nn.ReLU(inplace=True),
            nn.Conv2d(mid, channels, 1), nn.Sigmoid(),
        )

    def forward(self, x):
        return x * self.fc(x)


class FuseBlock(nn.Module):
    """Concatenated features -> 1x1 reduction -> residual block with channel attention."""

    def __init__(self, cin, cout):
        super().__init__()
        self.reduce = nn.Conv2d(cin, cout, 1)
        self.body = nn.Sequential(
            nn.Conv2d(cout, cout, 3, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(cout, cout, 3, padding=1),
            SqueezeExcite(cout),
        )

    def forward(self, x):
        x = self.reduce(x)
        return F.relu(x + self.body(x))


class DownStage(nn.Module):
    """Stride-2 convolution then Conv-ReLU: half the resolution, double the channels."""

    def __init__(self, cin, cout):
        super().__init__()
        self.body = nn.Sequential(conv_relu(cin, cout, stride=2), conv_relu(cout, cout))

    def forward(self, x):
        return self.body(x)


class BitEncoder(nn.Module):
    """U-shaped network modulating ``n_bits`` into an image.

    Level ``i`` (1-based) works at ``H / 2**i`` with ``base * 2**i`` channels.
    Every level fuses the encoder feature ``D_i``, the decoder feature ``U_i``
    and the nearest-upsampled message map ``M_i``. The output layer starts
    at zero, so a fresh encoder returns its input unchanged and the residual
    grows only as far as the bit loss asks for.
    """

    def __init__(self, n_bits=64, base=32, levels=3, mlp_mult=4, zero_init=True):
        super().__init__()
        self.n_bits = n_bits
        self.levels = levels
        self.side = map_side(n_bits)
        side2 = self.side * self.side
        widths = [base * 2 ** i for i in range(levels + 1)]
        # message maps at level i carry as many channels as the image features they join
        self.msg_channels = widths[1:]
        self.mlps = nn.ModuleList(ShortcutMLP(side2, mlp_mult * n_bits, c * side2) for c in self.msg_channels)

        self.head = conv_relu(3, base)
        self.down = nn.ModuleList(DownStage(widths[i], widths[i + 1]) for i in range(levels))
        self.bottleneck = conv_relu(widths[levels], widths[levels])
        # up[i] maps fused level i+2 features to level i+1 width (index 0 -> level 1)
        self.up = nn.ModuleList(conv_relu(widths[i + 2], widths[i + 1]) for i in range(levels - 1))
        self.fuse = nn.ModuleList(FuseBlock(3 * widths[i + 1], widths[i + 1]) for i in range(levels))
        self.to_full = conv_relu(widths[1], base)
        self.out = nn.Conv2d(2 * base, 3, 3, padding=1)
        relu_init_(self)
        nn.init.zeros_(self.out.bias)
        if zero_init:
            nn.init.zeros_(self.out.weight)
        else:
            nn.init.normal_(self.out.weight, std=1e-2)

    def message_maps(self, signal):
        signal = _pad_signal(signal, self.side)
        return [mlp(signal).view(-1, c, self.side, self.side) for mlp, c in zip(self.mlps, self.msg_channels)]

    def forward(self, i_med, signal):
        if signal.shape[-1] != self.n_bits:
            raise ConfigurationError(f"encoder trained for {self.n_bits} bits, got {signal.shape[-1]}")
        maps = self.message_maps(signal)
        x0 = self.head(i_med)
        feats = []
        x = x0
        for stage in self.down:
            x = stage(x)
            feats.append(x)

        u = self.bottleneck(feats[-1])
        for i in reversed(range(self.levels)):
            d = feats[i]
            if i < self.levels - 1:
                u = self.up[i](F.interpolate(u, scale_factor=2, mode="nearest"))
            m = F.interpolate(maps[i], size=d.shape[-2:], mode="nearest")
            u = self.fuse[i](torch.cat([d, u, m], dim=1))

        u = self.to_full(F.interpolate(u, scale_factor=2, mode="nearest"))
        return i_med + self.out(torch.cat([x0, u], dim=1))

    def encrypt(self, i_med, signal):
        return self(i_med, signal)


class BitDecoder(nn.Module):
    """U-shaped network that reduces a received image to ``S x S`` and reads the bits.

    After the U-net, stride-2 convolutions bring the trained ``image_size``
    down to ``S x S``; other input sizes are finished with average pooling.
    A ``base``-channel map is pooled to ``S x S`` and read by an MLP with a
    linear shortcut. Returns the pre-threshold signal; bits are ``signal > 0``.
    """

    def __init__(self, n_bits=64, image_size=512, base=32, levels=3, mlp_mult=4):
        super().__init__()
        self.n_bits = n_bits
        self.side = map_side(n_bits)
        widths = [base * 2 ** i for i in range(levels + 1)]
        self.head = conv_relu(3, base)
        self.down = nn.ModuleList(DownStage(widths[i], widths[i + 1]) for i in range(levels))
        self.up = nn.ModuleList(conv_relu(widths[i + 1] + widths[i], widths[i]) for i in range(levels))
        n_reduce = max(int(math.log2(max(image_size // self.side, 1))), 0)
        self.reduce = nn.Sequential(*[conv_relu(base, base, stride=2) for _ in range(n_reduce)])
        self.to_map = nn.Conv2d(base, base, 3, padding=1)
        n_feat = base * self.side * self.side
        self.mlp = ShortcutMLP(n_feat, mlp_mult * n_bits, n_bits)
        relu_init_(self)

    def forward(self, i_rec):
        x = self.head(i_rec)
        skips = [x]
        for stage in self.down:
            x = stage(x)
            skips.append(x)
        skips.pop()
        for i in reversed(range(len(self.up))):
            x = F.interpolate(x, size=skips[i].shape[-2:], mode="nearest")
            x = self.up[i](torch.cat([x, skips[i]], dim=1))
        x = self.to_map(self.reduce(x))
        x = F.adaptive_avg_pool2d(x, self.side).flatten(1)
        return self.mlp(x)

    def recover(self, i_rec):
        return signal_to_bits(self(i_rec))
