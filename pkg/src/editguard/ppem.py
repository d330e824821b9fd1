"""Prompt-based posterior estimation of the information lost at hiding time.

The estimator looks at a received image and predicts the watermark-branch
tensor that the hiding network discarded, conditioned on a small bank of
learnable degradation prompts.
"""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .inn import LayerNorm2d
from .wavelet import dwt


class ResBlock(nn.Module):
    def __init__(self, dim):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(dim, dim, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(dim, dim, 3, padding=1),
        )

    def forward(self, x):
        return x + self.body(x)


class ChannelAttention(nn.Module):
    """Multi-head attention across channels (transposed attention)."""

    def __init__(self, dim, heads=4):
        super().__init__()
        self.heads = heads
        self.temperature = nn.Parameter(torch.ones(heads, 1, 1))
        self.qkv = nn.Conv2d(dim, dim * 3, 1)
        self.qkv_dw = nn.Conv2d(dim * 3, dim * 3, 3, padding=1, groups=dim * 3)
        self.out = nn.Conv2d(dim, dim, 1)

    def forward(self, x):
        b, c, h, w = x.shape
        q, k, v = self.qkv_dw(self.qkv(x)).chunk(3, dim=1)
        q = q.reshape(b, self.heads, c // self.heads, h * w)
        k = k.reshape(b, self.heads, c // self.heads, h * w)
        v = v.reshape(b, self.heads, c // self.heads, h * w)
        q = F.normalize(q, dim=-1)
        k = F.normalize(k, dim=-1)
        attn = (q @ k.transpose(-2, -1)) * self.temperature
        out = attn.softmax(dim=-1) @ v
        return self.out(out.reshape(b, c, h, w))


class GatedFeedForward(nn.Module):
    def __init__(self, dim, expansion=2):
        super().__init__()
        hidden = dim * expansion
        self.inp = nn.Conv2d(dim, hidden * 2, 1)
        self.dw = nn.Conv2d(hidden * 2, hidden * 2, 3, padding=1, groups=hidden * 2)
        self.out = nn.Conv2d(hidden, dim, 1)

    def forward(self, x):
        x1, x2 = self.dw(self.inp(x)).chunk(2, dim=1)
        return self.out(F.gelu(x1) * x2)


class TransformerBlock(nn.Module):
    def __init__(self, dim, heads=4):
        super().__init__()
        self.norm1 = LayerNorm2d(dim)
        self.attn = ChannelAttention(dim, heads)
        self.norm2 = LayerNorm2d(dim)
        self.ffn = GatedFeedForward(dim)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.ffn(self.norm2(x))


class TransformerBranch(nn.Module):
    """Transformer blocks followed by a zero-initialized projection.

    The projection makes the branch output exactly zero at initialization,
    so the residual sum in :meth:`PosteriorEstimator.extract_features` starts
    out as the residual-block features alone.
    """

    def __init__(self, dim, depth, heads=4):
        super().__init__()
        self.blocks = nn.Sequential(*[TransformerBlock(dim, heads) for _ in range(depth)])
        self.tail = nn.Conv2d(dim, dim, 1)
        nn.init.zeros_(self.tail.weight)
        nn.init.zeros_(self.tail.bias)

    def forward(self, x):
        return self.tail(self.blocks(x))


class PromptBank(nn.Module):
    """``n_prompts`` learnable tensors of shape ``(prompt_dim, size, size)``."""

    def __init__(self, n_prompts=3, prompt_dim=72, size=36):
        super().__init__()
        self.prompts = nn.Parameter(torch.rand(n_prompts, prompt_dim, size, size))

    @property
    def n_prompts(self):
        return self.prompts.shape[0]

    @property
    def prompt_dim(self):
        return self.prompts.shape[1]


class PosteriorEstimator(nn.Module):
    """Predicts the discarded watermark-branch tensor from a received image.

    Args:
        dim: feature width of the residual and transformer stacks.
        n_res: number of residual blocks.
        n_trans: number of channel-wise transformer blocks.
        heads: attention heads per transformer block; must divide ``dim``.
        n_prompts, prompt_dim, prompt_size: prompt bank geometry.
        use_prompts: disable prompt fusion entirely when False (ablation).
    """

    out_channels = 12

    def __init__(self, dim=48, n_res=8, n_trans=8, heads=4, n_prompts=3, prompt_dim=72,
                 prompt_size=36, use_prompts=True):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim={dim} not divisible by heads={heads}")
        self.use_prompts = use_prompts
        self.embed = nn.Conv2d(12, dim, 3, padding=1)
        self.res = nn.Sequential(*[ResBlock(dim) for _ in range(n_res)])
        self.trans = TransformerBranch(dim, n_trans, heads)
        fuse_in = dim
        if use_prompts:
            self.prompt_bank = PromptBank(n_prompts, prompt_dim, prompt_size)
            self.weight_head = nn.Conv2d(dim, n_prompts, 1)
            self.prompt_conv = nn.Conv2d(prompt_dim, prompt_dim, 3, padding=1)
            fuse_in += prompt_dim
        self.fuse = nn.Conv2d(fuse_in, self.out_channels, 3, padding=1)

    def extract_features(self, i_rec):
        r = self.res(self.embed(dwt(i_rec)))
        return self.trans(r) + r

    def prompt_weights(self, f_c):
        logits = self.weight_head(f_c.mean(dim=(2, 3), keepdim=True))
        return torch.softmax(logits.flatten(1), dim=1)

    def fuse_prompts(self, f_c):
        """Blend the prompt bank with per-sample softmax weights and upsample to ``f_c``."""
        w = self.prompt_weights(f_c)
        blended = torch.einsum("bn,nchw->bchw", w, self.prompt_bank.prompts)
        blended = F.interpolate(blended, size=f_c.shape[-2:], mode="bilinear", align_corners=False)
        return self.prompt_conv(blended)

    def forward(self, i_rec):
        f_c = self.extract_features(i_rec)
        if self.use_prompts:
            f_c = torch.cat([self.fuse_prompts(f_c), f_c], dim=1)
        return self.fuse(f_c)

    def estimate(self, i_rec):
        """Alias of ``forward``: the predicted lost-information tensor."""
        return self(i_rec)
