import math

import numpy as np
import pytest
import torch

from editguard.degradation import (LUMA_TABLE, DegradationSpec, RandomDegradation, block_dct, block_idct,
                                   dct_matrix, gaussian_noise, jpeg_simulate, poisson_noise,
                                   quantization_tables, quantize_coefficients, sample_random_degradation,
                                   transmit)


def _basis(u, v):
    a = lambda k: math.sqrt(1 / 8) if k == 0 else math.sqrt(2 / 8)
    out = np.zeros((8, 8))
    for i in range(8):
        for j in range(8):
            out[i, j] = a(u) * a(v) * math.cos((2 * i + 1) * u * math.pi / 16) * math.cos((2 * j + 1) * v * math.pi / 16)
    return out


def test_q50_tables_are_the_reference_tables():
    luma, chroma = quantization_tables(50)
    assert np.array_equal(luma, LUMA_TABLE)
    assert chroma[0, 0] == 17 and chroma[7, 7] == 99
    assert np.all(quantization_tables(100)[0] == 1)
    # Q=10 scales by 5: 16 -> 80, clipped at 255 at the high end
    assert quantization_tables(10)[0][0, 0] == 80 and quantization_tables(10)[0].max() == 255


def test_q50_quantized_levels_by_hand():
    coef = {(0, 0): 250.0, (0, 1): 50.0, (1, 0): -40.0, (2, 2): 33.0, (7, 7): 150.0, (3, 5): 20.0}
    plane = sum(c * _basis(u, v) for (u, v), c in coef.items())
    # 250/16=15.6, 50/11=4.5, -40/12=-3.3, 33/16=2.1, 150/99=1.5, 20/87=0.23
    expected = np.zeros((8, 8), dtype=np.int64)
    expected[0, 0], expected[0, 1], expected[1, 0], expected[2, 2], expected[7, 7] = 16, 5, -3, 2, 2
    x = torch.from_numpy(plane)[None, None]
    levels = quantize_coefficients(block_dct(x), quantization_tables(50)[0])[0, 0, 0, 0]
    assert np.array_equal(levels.numpy().astype(np.int64), expected)


def test_dct_is_orthonormal_and_inverts():
    d = dct_matrix()
    assert torch.allclose(d @ d.T, torch.eye(8, dtype=torch.float64), atol=1e-12)
    assert np.allclose(d[2].numpy(), [_basis(2, 0)[i, 0] / _basis(0, 0)[0, 0] * math.sqrt(1 / 8) for i in range(8)])
    x = torch.randn(1, 1, 16, 24, dtype=torch.float64)
    assert torch.allclose(block_idct(block_dct(x)), x, atol=1e-12)


def test_q100_near_identity_on_smooth_gradient():
    h = w = 64
    yy, xx = torch.meshgrid(torch.linspace(0, 1, h), torch.linspace(0, 1, w), indexing="ij")
    x = torch.stack([0.2 + 0.6 * xx, 0.3 + 0.5 * yy, 0.5 + 0.3 * (xx - yy) / 2])[None].double()
    assert (jpeg_simulate(x, 100) - x).abs().max() <= 2 / 255


def test_jpeg_quality_ordering_and_padding():
    torch.manual_seed(0)
    x = torch.rand(1, 3, 20, 28)
    e90 = (jpeg_simulate(x, 90) - x).pow(2).mean()
    e50 = (jpeg_simulate(x, 50) - x).pow(2).mean()
    assert e90 < e50
    assert jpeg_simulate(x, 90).shape == x.shape


def test_jpeg_straight_through_gradient():
    x = torch.rand(1, 3, 16, 16, requires_grad=True)
    jpeg_simulate(x, 70).sum().backward()
    assert x.grad is not None and x.grad.abs().sum() > 0


def test_noise_is_seeded_and_scaled():
    x = torch.full((2, 3, 32, 32), 0.5, dtype=torch.float64)
    a, b = gaussian_noise(x, 5, seed=3), gaussian_noise(x, 5, seed=3)
    assert torch.equal(a, b)
    assert abs((a - x).std().item() * 255 - 5) < 0.2
    assert torch.equal(gaussian_noise(x, 0), x)
    p = poisson_noise(x, 2, seed=1)
    s = 255 / 2
    # variance of Poisson(x s)/s is x/s
    assert abs((p - x).var().item() - 0.5 / s) < 0.2 * 0.5 / s
    assert torch.allclose(torch.round(p * s), p * s)


def test_transmit_clean_equals_brute_force_mux():
    rng = np.random.default_rng(0)
    for _ in range(10):
        a, b = rng.random((2, 1, 3, 8, 8))
        m = (rng.random((8, 8)) < 0.3).astype(np.float64)
        out = transmit(torch.from_numpy(a), torch.from_numpy(b), torch.from_numpy(m)).numpy()
        ref = np.empty_like(a)
        for c in range(3):
            for i in range(8):
                for j in range(8):
                    ref[0, c, i, j] = b[0, c, i, j] if m[i, j] else a[0, c, i, j]
        assert np.array_equal(out, ref)


def test_transmit_rejects_bad_inputs():
    x = torch.zeros(1, 3, 8, 8)
    with pytest.raises(ValueError):
        transmit(x, torch.zeros(1, 3, 4, 4), torch.zeros(8, 8))
    with pytest.raises(ValueError):
        transmit(x, x, torch.full((8, 8), 0.5))
    with pytest.raises(ValueError):
        transmit(x, x, torch.zeros(4, 4))


def test_spec_text_round_trip_and_validation():
    s = DegradationSpec("jpeg", 70, 5)
    assert DegradationSpec.from_text(s.to_text()) == s
    assert DegradationSpec.from_text("clean") == DegradationSpec()
    for bad in (("blur", 1), ("gaussian", -1), ("poisson", 0), ("jpeg", 0), ("jpeg", 101)):
        with pytest.raises(ValueError):
            DegradationSpec(*bad)


def test_random_degradation_ranges():
    sampler = RandomDegradation()
    rng = np.random.default_rng(0)
    kinds = set()
    for _ in range(400):
        s = sampler.sample(rng)
        kinds.add(s.kind)
        if s.kind == "gaussian":
            assert 0 <= s.param <= 5
        elif s.kind == "poisson":
            assert 2 <= s.param <= 4
        elif s.kind == "jpeg":
            assert 70 <= s.param <= 95 and s.param == int(s.param)
    assert kinds == {"clean", "gaussian", "poisson", "jpeg"}
    assert sample_random_degradation(7) == sample_random_degradation(7)
