import numpy as np
import pytest
import torch

from conftest import tiny_config
from editguard import forensics
from editguard.bitcodec import ConfigurationError
from editguard.forensics import Case
from editguard.model import IBSN


def test_mask_rule_against_loop():
    rng = np.random.default_rng(0)
    for _ in range(50):
        w_hat = rng.random((1, 3, 8, 8))
        w = rng.random((1, 3, 8, 8))
        tau = float(rng.uniform(0.05, 0.6))
        got = forensics.threshold_mask(forensics.residual_map(torch.from_numpy(w_hat), torch.from_numpy(w)), tau)
        ref = np.zeros((1, 8, 8), dtype=np.uint8)
        for i in range(8):
            for j in range(8):
                z = max(abs(w_hat[0, c, i, j] - w[0, c, i, j]) for c in range(3))
                ref[0, i, j] = 1 if z >= tau else 0
        assert np.array_equal(got.numpy(), ref)
    assert forensics.threshold_mask(torch.tensor([0.2]), 0.2).item() == 1


def test_adjudicate_order():
    ref = np.array([1, 0, 1, 0] * 5)
    clean = np.zeros((10, 10))
    dirty = clean.copy()
    dirty[0, :2] = 1  # density 0.02
    assert forensics.adjudicate(ref, ref, clean).case is Case.CLEAN
    assert forensics.adjudicate(ref, ref, dirty).case is Case.TAMPERED
    wrong = ref.copy()
    wrong[:3] ^= 1  # 85% agreement
    v = forensics.adjudicate(wrong, ref, dirty)
    assert v.case is Case.COPYRIGHT_MISMATCH and v.bit_agreement == 0.85
    assert v.to_record()["case"] == "copyright_mismatch"
    with pytest.raises(ValueError):
        forensics.adjudicate(ref[:3], ref, clean)


def test_bits_to_hex():
    assert forensics.bits_to_hex([1, 0, 1, 0, 1, 1, 1, 1]) == "af"
    assert forensics.bits_to_hex([1]) == "80"


def test_localization_watermark():
    blue = forensics.localization_watermark((2, 3, 4, 4))
    assert blue[:, 2].eq(1).all() and blue[:, :2].eq(0).all()
    img = torch.rand(3, 8, 8)
    assert forensics.localization_watermark((2, 3, 4, 4), img).shape == (2, 3, 4, 4)


def test_cleanup_removes_speckle():
    m = np.zeros((1, 16, 16), dtype=np.uint8)
    m[0, 4:12, 4:12] = 1
    m[0, 0, 15] = 1
    out = forensics.cleanup_mask(m).numpy()
    assert out[0, 0, 15] == 0 and out[0, 4:12, 4:12].all()


def test_fresh_model_pipeline():
    torch.manual_seed(0)
    model = IBSN(tiny_config())
    x = torch.rand(2, 3, 16, 16)
    con = forensics.embed(model, x, torch.tensor([1, 0, 1, 1]))
    # a fresh model hides nothing, so the container is the 8-bit cover
    assert torch.allclose(con, forensics.quantize_8bit(x))
    mask = forensics.locate(model, con)
    assert mask.shape == (2, 16, 16) and mask.dtype == torch.uint8
    assert forensics.extract_copyright(model, con).shape == (2, 4)
    v = forensics.verify(model, con[0], [1, 0, 1, 1])
    assert v.case in tuple(Case)
    with pytest.raises(ConfigurationError):
        forensics.embed(model, torch.rand(1, 3, 32, 32), torch.zeros(4))
    with pytest.raises(ValueError):
        forensics.verify(model, con, [1, 0, 1, 1])
