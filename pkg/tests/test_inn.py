import math

import pytest
import torch

from editguard.inn import (EXP_CLAMP, LFIM, CouplingBlock, DenseBlock, InvertibleCodec, NumericError,
                           soft_clamp)


class Fn(torch.nn.Module):
    def __init__(self, f):
        super().__init__()
        self.f = f

    def forward(self, x):
        return self.f(x)


def _randomize(module, scale=0.05, seed=0):
    """Fill the zero-initialized parameters so every block does real work.

    Other weights keep the framework default, which is what training starts from.
    """
    torch.manual_seed(seed)
    module = module.__class__(**_kwargs(module)) if hasattr(module, "n_blocks") else module
    with torch.no_grad():
        for name, p in module.named_parameters():
            if name.endswith(("last.weight", "last.bias", "beta", "gamma")):
                p.normal_(0.0, scale if "last" in name else 0.5)
    return module


def _kwargs(codec):
    return dict(n_blocks=codec.n_blocks, width=codec.width, expand=codec.expand,
                use_lfim=not isinstance(codec.blocks[0].phi1.lfim, torch.nn.Identity))


def test_soft_clamp_bounds():
    s = torch.linspace(-50, 50, 101)
    c = soft_clamp(s)
    assert c.abs().max() <= EXP_CLAMP
    assert soft_clamp(torch.tensor([3.0])).item() < EXP_CLAMP
    assert torch.allclose(soft_clamp(torch.tensor([1e-4])), torch.tensor([1e-4]), atol=1e-9)


def test_coupling_matches_scalar_formula(double):
    # phi outputs replaced by known functions: the block must follow
    # h_ori' = h_ori + conv(phi1(h_loc)); h_loc' = h_loc * exp(c(phi2(h_ori'))) + phi3(h_ori')
    block = CouplingBlock(channels=12, width=4)
    block.phi1 = Fn(lambda t: 0.5 * t)
    block.phi2 = Fn(lambda t: t.sin())
    block.phi3 = Fn(lambda t: t * t)
    with torch.no_grad():
        block.conv.weight.zero_()
        block.conv.weight[torch.arange(12), torch.arange(12), 1, 1] = 2.0
        block.conv.bias.zero_()
    h_ori, h_loc = torch.randn(1, 12, 2, 2), torch.randn(1, 12, 2, 2)
    o, l = block(h_ori, h_loc)
    exp_o = h_ori + 2.0 * 0.5 * h_loc
    c = EXP_CLAMP * torch.tanh(exp_o.sin() / EXP_CLAMP)
    exp_l = h_loc * torch.exp(c) + exp_o**2
    assert torch.allclose(o, exp_o) and torch.allclose(l, exp_l)


@pytest.mark.parametrize("dtype,tol", [(torch.float32, 1e-4), (torch.float64, 1e-10)])
def test_bijective_random_params(dtype, tol):
    worst = 0.0
    for trial in range(100):
        codec = _randomize(InvertibleCodec(n_blocks=2, width=4, use_lfim=trial % 2 == 0), 0.05, trial).to(dtype)
        g = torch.Generator().manual_seed(1000 + trial)
        a = torch.randn(1, 12, 4, 4, generator=g, dtype=dtype)
        b = torch.randn(1, 12, 4, 4, generator=g, dtype=dtype)
        with torch.no_grad():
            ra, rb = codec.inverse(*codec(a, b))
        worst = max(worst, (ra - a).abs().max().item(), (rb - b).abs().max().item())
    assert worst <= tol


def test_zero_init_hide_is_identity():
    codec = InvertibleCodec(n_blocks=3, width=8)
    x, w = torch.rand(2, 3, 8, 8), torch.rand(2, 3, 8, 8)
    with torch.no_grad():
        i_med, z = codec.hide(x, w)
    assert (i_med - x).abs().max() <= 1e-6


def test_fresh_lfim_and_dense_are_identity_and_zero():
    x = torch.randn(2, 12, 4, 4)
    assert torch.equal(LFIM(12)(x), x)
    assert torch.equal(DenseBlock(12, 12, 4)(x), torch.zeros_like(x))


def test_reveal_inverts_hide_with_true_z():
    codec = _randomize(InvertibleCodec(n_blocks=2, width=4)).double()
    x, w = torch.rand(1, 3, 8, 8, dtype=torch.float64), torch.rand(1, 3, 8, 8, dtype=torch.float64)
    with torch.no_grad():
        i_med, z = codec.hide(x, w)
        x_hat, w_hat = codec.reveal(i_med, z)
    assert torch.allclose(x_hat, x, atol=1e-10) and torch.allclose(w_hat, w, atol=1e-10)


def test_shape_errors():
    codec = InvertibleCodec(n_blocks=1, width=4)
    with pytest.raises(ValueError):
        codec.hide(torch.rand(1, 3, 8, 8), torch.rand(1, 3, 4, 4))
    with pytest.raises(ValueError):
        codec.reveal(torch.rand(1, 3, 8, 8), torch.rand(1, 12, 2, 2))


def test_non_finite_reports_block():
    codec = InvertibleCodec(n_blocks=2, width=4, check_finite=True)
    x = torch.rand(1, 12, 4, 4)
    x[0, 0, 0, 0] = math.nan
    with pytest.raises(NumericError) as info:
        codec(x, torch.rand(1, 12, 4, 4))
    assert info.value.block == 0
