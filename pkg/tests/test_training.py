import math

import numpy as np

import pytest
import torch

from conftest import tiny_config
from editguard.checkpoint import CheckpointBundle
from editguard.training import (NonFiniteLossError, TrainConfig, TrainingError, _paste_augment, learning_rate,
                                loss_cop, loss_loc, train_phase1, train_phase2)


def _cfg(phase, **kw):
    base = dict(iterations=4, batch_size=2, lr=1e-3, betas=(0.9, 0.999), blue_period=2)
    base.update(kw)
    return TrainConfig(phase=phase, **base)


def test_loss_values_by_hand():
    a, b = torch.zeros(1, 1, 2, 2), torch.ones(1, 1, 2, 2)
    w, w_hat = torch.tensor([[0.5, -0.5]]), torch.tensor([[0.5, 0.5]])
    # mse image 1, mse bits 0.5
    assert loss_cop(a, b, w_hat, w, lam=10.0).item() == pytest.approx(1 + 10 * 0.5)
    # l1 1, 100 * mse 1, beta * l1 1
    assert loss_loc(a, b, a, b, a, alpha=100.0, beta=2.0).item() == pytest.approx(1 + 100 + 2)


def test_gradcheck_losses(double):
    g = torch.Generator().manual_seed(0)
    t = lambda *s: torch.rand(*s, generator=g, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda x, y: loss_cop(x, y, y[:, 0, 0], x[:, 0, 0], 10.0),
                                    (t(1, 3, 8, 8), t(1, 3, 8, 8)))
    assert torch.autograd.gradcheck(lambda x, y, z: loss_loc(x, y, z, y, x),
                                    (t(1, 3, 8, 8), t(1, 3, 8, 8), t(1, 3, 8, 8)))


def test_learning_rate_halves():
    assert learning_rate(0, 1e-4, 10) == 1e-4
    assert learning_rate(25, 1e-4, 10) == 2.5e-5


def test_lam_schedule():
    c = TrainConfig(iterations=101, lam=10.0, lam_final=0.1, lam_decay_start=50)
    assert c.lam_at(0) == c.lam_at(49) == 10.0
    assert c.lam_at(100) == pytest.approx(0.1)
    assert c.lam_at(75) == pytest.approx(1.0)
    assert TrainConfig().lam_at(10**6) == 10.0


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(phase="other")
    with pytest.raises(ValueError):
        TrainConfig(lam=0)
    assert TrainConfig.desk("bitcodec").iterations == 2000
    assert TrainConfig.desk("inn", iterations=7).iterations == 7
    with pytest.raises(ValueError):
        TrainConfig(tamper_prob=1.5)


def test_paste_augment():
    x = torch.rand(4, 3, 16, 16)
    rng = np.random.default_rng(0)
    donor, mask = _paste_augment(TrainConfig(), rng, x)
    assert donor is None and mask.shape == (16, 16) and not mask.any()
    assert rng.random() == np.random.default_rng(0).random()

    donor, mask = _paste_augment(TrainConfig(tamper_prob=1.0), np.random.default_rng(0), x)
    assert torch.equal(donor[1], x[0]) and torch.equal(donor[0], x[3])
    assert mask.shape == (4, 16, 16)
    area = mask.mean(dim=(1, 2))
    assert (area > 0.02).all() and (area < 0.5).all()
    assert set(mask.unique().tolist()) <= {0.0, 1.0}


def test_phase1_with_paste_augment(tiny_images):
    a = train_phase1(_cfg("bitcodec", tamper_prob=1.0), tiny_images, tiny_config())
    b = train_phase1(_cfg("bitcodec"), tiny_images, tiny_config())
    assert all(math.isfinite(r["loss"]) for r in a.log)
    assert a.log != b.log


def test_phase1_resume_matches_uninterrupted(tiny_images):
    mc = tiny_config()
    full = train_phase1(_cfg("bitcodec", iterations=4), tiny_images, mc)
    half = train_phase1(_cfg("bitcodec", iterations=2), tiny_images, mc)
    rest = train_phase1(_cfg("bitcodec", iterations=4), tiny_images, resume=half)
    assert [r["loss"] for r in half.log + rest.log] == [r["loss"] for r in full.log]
    for k, v in full.state.items():
        assert torch.equal(v, rest.state[k]), k


def test_phase1_is_seeded(tiny_images):
    mc = tiny_config()
    a = train_phase1(_cfg("bitcodec"), tiny_images, mc)
    b = train_phase1(_cfg("bitcodec"), tiny_images, mc)
    assert a.log == b.log
    c = train_phase1(_cfg("bitcodec", seed=1), tiny_images, mc)
    assert a.log != c.log


def test_phase2_freezes_bit_codec_and_resumes(tiny_images, tmp_path):
    p1 = train_phase1(_cfg("bitcodec", iterations=2), tiny_images, tiny_config())
    full = train_phase2(_cfg("inn"), tiny_images, p1, log_path=tmp_path / "p2.jsonl")
    for k, v in p1.state.items():
        if k.startswith(("bem.", "brm.")):
            assert torch.equal(v, full.state[k])
    assert any(not torch.equal(v, full.state[k]) for k, v in p1.state.items() if k.startswith("inn."))
    assert len((tmp_path / "p2.jsonl").read_text().splitlines()) == 4

    half = train_phase2(_cfg("inn", iterations=2), tiny_images, p1)
    half = CheckpointBundle.load(half.save(tmp_path / "half.safetensors"))
    rest = train_phase2(_cfg("inn"), tiny_images, p1, resume=half)
    for k, v in full.state.items():
        assert torch.allclose(v, rest.state[k], atol=0, rtol=0), k


def test_phase2_bit_weight_keeps_codec_frozen(tiny_images):
    p1 = train_phase1(_cfg("bitcodec", iterations=2), tiny_images, tiny_config())
    plain = train_phase2(_cfg("inn"), tiny_images, p1)
    weighted = train_phase2(_cfg("inn", bit_weight=1.0), tiny_images, p1)
    for k, v in p1.state.items():
        if k.startswith(("bem.", "brm.")):
            assert torch.equal(v, weighted.state[k])
    assert [r["loss"] for r in plain.log] != [r["loss"] for r in weighted.log]


def test_phase2_needs_phase1(tiny_images):
    with pytest.raises(TrainingError):
        train_phase2(_cfg("inn"), tiny_images, None)


def test_non_finite_loss_raises(tiny_images):
    bad = tiny_images.clone()
    bad[:] = math.nan
    with pytest.raises(NonFiniteLossError):
        train_phase1(_cfg("bitcodec", iterations=1, degrade=False), bad, tiny_config())


def test_bad_dataset():
    with pytest.raises(TrainingError):
        train_phase1(_cfg("bitcodec"), torch.zeros(0, 3, 16, 16), tiny_config())
