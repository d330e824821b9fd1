import numpy as np
import pytest
import torch

from conftest import tiny_config
from editguard.harness.attribution import (attribution_map, locality, locality_trials, point_set,
                                           random_centers, window_mass)
from editguard.model import IBSN


def test_point_set():
    pts = point_set((10, 20), 3)
    assert pts[0] == (9, 19) and pts[-1] == (11, 21) and len(pts) == 9


def test_window_mass_matches_loop():
    rng = np.random.default_rng(0)
    a = rng.random((20, 20))
    m = window_mass(a, 5)
    for r, c in [(0, 0), (10, 10), (19, 3)]:
        ref = a[max(r - 2, 0):r + 3, max(c - 2, 0):c + 3].sum()
        assert m[r, c] == pytest.approx(ref)


def test_locality_on_synthetic_map():
    a = np.zeros((64, 64))
    a[30:35, 30:35] = 1.0
    inside, far = locality(a, (32, 32))
    assert inside == 25 and far == 0
    a[0, 0] = 100.0
    assert locality(a, (32, 32))[1] == 100.0
    with pytest.raises(ValueError):
        locality(np.zeros((16, 16)), (8, 8))


def test_attribution_shape_and_trials():
    torch.manual_seed(0)
    model = IBSN(tiny_config())
    x = torch.rand(1, 3, 16, 16)
    attr = attribution_map(model, x, point_set((8, 8), 3))
    assert attr.shape == (16, 16) and (attr >= 0).all()
    assert attr.sum() > 0
    recs = locality_trials(model, x, n=2, set_size=3, window=5, min_distance=8)
    assert len(recs) == 2 and {"inside", "far_max", "local"} <= set(recs[0])
    assert random_centers(3, 16, 16, seed=1) == random_centers(3, 16, 16, seed=1)
    with pytest.raises(ValueError):
        attribution_map(model, x, [])
