"""The united image-bit steganography network: all four trainable parts in one module."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import torch
import torch.nn as nn

from .bitcodec import BitDecoder, BitEncoder
from .inn import InvertibleCodec
from .ppem import PosteriorEstimator


@dataclass
class ModelConfig:
    image_size: int = 512
    n_bits: int = 64
    n_blocks: int = 6
    dense_width: int = 32
    lfim_expand: int = 2
    use_lfim: bool = True
    ppem_dim: int = 48
    n_res: int = 8
    n_trans: int = 8
    heads: int = 4
    n_prompts: int = 3
    prompt_dim: int = 72
    prompt_size: int = 36
    use_prompts: bool = True
    bit_base: int = 32
    bit_levels: int = 3

    @classmethod
    def desk(cls, **overrides):
        """Small CPU-trainable configuration: 64x64 images, 16-bit payload."""
        base = dict(
            image_size=64, n_bits=16, n_blocks=2, dense_width=16, ppem_dim=16, n_res=2,
            n_trans=1, prompt_dim=16, prompt_size=36, bit_base=16, use_lfim=False,
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def to_dict(self):
        return asdict(self)


class IBSN(nn.Module):
    """Image hiding/revealing codec, posterior estimator and bit codec."""

    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = config = config or ModelConfig()
        self.inn = InvertibleCodec(config.n_blocks, config.dense_width, config.lfim_expand, config.use_lfim)
        self.ppem = PosteriorEstimator(
            config.ppem_dim, config.n_res, config.n_trans, config.heads, config.n_prompts,
            config.prompt_dim, config.prompt_size, config.use_prompts,
        )
        self.bem = BitEncoder(config.n_bits, config.bit_base, config.bit_levels)
        self.brm = BitDecoder(config.n_bits, config.image_size, config.bit_base, config.bit_levels)

    def encode(self, i_ori, w_loc, signal):
        """Hide the localization watermark, then modulate the bits. Returns ``(i_con, i_med)``."""
        i_med, _ = self.inn.hide(i_ori, w_loc)
        return self.bem(i_med, signal), i_med

    def decode(self, i_rec):
        """Returns ``(i_ori_hat, w_loc_hat, bit_signal)``."""
        z_hat = self.ppem(i_rec)
        i_ori_hat, w_loc_hat = self.inn.reveal(i_rec, z_hat)
        return i_ori_hat, w_loc_hat, self.brm(i_rec)

    def bit_parameters(self):
        return list(self.bem.parameters()) + list(self.brm.parameters())

    def image_parameters(self):
        return list(self.inn.parameters()) + list(self.ppem.parameters())


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def pure_blue(shape, dtype=torch.float32):
    """Solid ``[0, 0, 255]`` watermark for an NCHW ``shape``."""
    w = torch.zeros(shape, dtype=dtype)
    w[:, 2] = 1.0
    return w
