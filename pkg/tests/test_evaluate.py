import json

import numpy as np
import torch

from conftest import tiny_config
from editguard.harness.data import load_image_dir, resize_square, sample_patches, to_tensor, to_uint8, write_rgb
from editguard.harness.evaluate import evaluate
from editguard.model import IBSN


def test_evaluate_rows_and_report(tmp_path):
    torch.manual_seed(0)
    model = IBSN(tiny_config())
    images = to_tensor(sample_patches(3, 16, seed=0))
    rep = evaluate(model, images, ["clean:0:0", "gaussian:5:1"], cases_per_image=2, seed=3)
    assert len(rep.rows) == 12
    agg = rep.aggregate()
    assert agg["clean:0"]["n"] == 6 and 0 <= agg["gaussian:5"]["f1"] <= 1
    again = evaluate(model, images, ["clean:0:0", "gaussian:5:1"], cases_per_image=2, seed=3)
    assert again.rows == rep.rows
    saved = json.loads(rep.save(tmp_path / "r.json").read_text())
    assert saved["config"]["n_images"] == 3


def test_data_helpers(tmp_path):
    p = sample_patches(4, 32, seed=1)
    assert p.shape == (4, 32, 32, 3) and p.dtype == np.uint8
    assert np.array_equal(p, sample_patches(4, 32, seed=1))
    assert np.array_equal(to_uint8(to_tensor(p)), p)
    write_rgb(tmp_path / "a.png", p[0])
    (tmp_path / "bad.png").write_bytes(b"not an image")
    imgs, names = load_image_dir(tmp_path, size=16)
    assert names == ["a.png"] and imgs[0].shape == (16, 16, 3)
    assert resize_square(np.zeros((10, 20, 3), np.uint8), 8).shape == (8, 8, 3)
