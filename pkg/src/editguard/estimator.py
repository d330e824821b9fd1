"""scikit-learn style front end.

``fit`` trains both phases, ``transform`` embeds the dual watermark,
``predict`` returns tamper masks and ``score`` the mean localization F1.

>>> eg = EditGuard(phase1_iterations=20, phase2_iterations=20).fit(images)  # doctest: +SKIP
>>> containers = eg.transform(images)                                       # doctest: +SKIP
>>> masks = eg.predict(received)                                            # doctest: +SKIP
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import forensics
from .checkpoint import CheckpointBundle
from .harness import metrics
from .model import ModelConfig
from .training import TrainConfig, train_phase1, train_phase2
from .validation import check_bits, check_images, check_masks, restore_layout


class EditGuard(TransformerMixin, BaseEstimator):
    """Dual-watermark embedder and tamper locator.

    Parameters left as ``None`` take the desk-scale training defaults.
    ``payload`` is a fixed bit sequence embedded by ``transform``; when
    ``None`` a seeded random payload is drawn at fit time.
    """

    def __init__(self, image_size=64, n_bits=16, model_overrides=None, phase1_iterations=None,
                 phase2_iterations=None, batch_size=4, lr=None, degrade=True, seed=0, payload=None,
                 tau=forensics.DEFAULT_TAU, theta_bits=forensics.DEFAULT_THETA_BITS,
                 theta_mask=forensics.DEFAULT_THETA_MASK, log_dir=None):
        self.image_size = image_size
        self.n_bits = n_bits
        self.model_overrides = model_overrides
        self.phase1_iterations = phase1_iterations
        self.phase2_iterations = phase2_iterations
        self.batch_size = batch_size
        self.lr = lr
        self.degrade = degrade
        self.seed = seed
        self.payload = payload
        self.tau = tau
        self.theta_bits = theta_bits
        self.theta_mask = theta_mask
        self.log_dir = log_dir

    def _train_config(self, phase):
        over = {"batch_size": self.batch_size, "degrade": self.degrade, "seed": self.seed}
        iters = self.phase1_iterations if phase == "bitcodec" else self.phase2_iterations
        if iters is not None:
            over["iterations"] = iters
        if self.lr is not None:
            over["lr"] = self.lr
        return TrainConfig.desk(phase, **over)

    def fit(self, X, y=None):
        images, _ = check_images(X, self.image_size)
        mc = ModelConfig.desk(image_size=self.image_size, n_bits=self.n_bits, **(self.model_overrides or {}))
        logs = Path(self.log_dir) if self.log_dir else None
        p1 = train_phase1(self._train_config("bitcodec"), images, mc,
                          log_path=logs / "phase1.jsonl" if logs else None)
        bundle = train_phase2(self._train_config("inn"), images, p1,
                              log_path=logs / "phase2.jsonl" if logs else None)
        self._set_bundle(bundle)
        self.training_log_ = p1.log + bundle.log
        return self

    def _set_bundle(self, bundle):
        self.bundle_ = bundle
        self.model_ = bundle.build_model().eval()
        n_bits = self.model_.config.n_bits
        if self.payload is None:
            rng = np.random.default_rng([self.seed, 2])
            self.payload_ = rng.integers(0, 2, size=n_bits).astype(np.int64)
        else:
            self.payload_ = check_bits(self.payload, n_bits)[0].numpy()
        self.n_features_in_ = 3 * self.model_.config.image_size ** 2

    @classmethod
    def from_checkpoint(cls, path, **params):
        bundle = CheckpointBundle.load(path)
        est = cls(image_size=bundle.model_config["image_size"], n_bits=bundle.model_config["n_bits"], **params)
        est._set_bundle(bundle)
        return est

    def save(self, path):
        check_is_fitted(self, "model_")
        return self.bundle_.save(path)

    def transform(self, X, payload=None):
        """Containers for ``X`` in the input's layout (uint8 NHWC in, uint8 NHWC out)."""
        check_is_fitted(self, "model_")
        images, channels_last = check_images(X, self.model_.config.image_size)
        bits = check_bits(self.payload_ if payload is None else payload, self.model_.config.n_bits, len(images))
        if len(bits) == 1:
            bits = bits.expand(len(images), -1)
        return restore_layout(forensics.embed(self.model_, images, bits), channels_last)

    def decision_function(self, X):
        """Pre-threshold residual maps ``(N, H, W)``."""
        check_is_fitted(self, "model_")
        images, _ = check_images(X, self.model_.config.image_size)
        _, residual = forensics.locate(self.model_, images, tau=self.tau, return_residual=True)
        return residual.numpy()

    def predict(self, X):
        """Binary tamper masks ``(N, H, W)`` uint8."""
        return (self.decision_function(X) >= self.tau).astype(np.uint8)

    def extract(self, X):
        """Recovered payload bits ``(N, L)``."""
        check_is_fitted(self, "model_")
        images, _ = check_images(X, self.model_.config.image_size)
        return forensics.extract_copyright(self.model_, images).numpy()

    def verify(self, X, payload=None):
        """One :class:`~editguard.forensics.ForensicVerdict` per image."""
        ref = self.payload_ if payload is None else check_bits(payload, self.model_.config.n_bits)[0].numpy()
        masks, bits = self.predict(X), self.extract(X)
        return [forensics.adjudicate(b, ref, m, self.theta_bits, self.theta_mask) for b, m in zip(bits, masks)]

    def score(self, X, y):
        """Mean pixel F1 of predicted masks against ground-truth masks ``y``."""
        pred = self.predict(X)
        gt = check_masks(y, pred.shape)
        if len(gt) != len(pred):
            raise ValueError(f"{len(gt)} masks for {len(pred)} images")
        return float(np.mean([metrics.f1(p, g) for p, g in zip(pred, gt)]))
