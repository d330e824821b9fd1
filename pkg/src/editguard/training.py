"""Two-phase training.

Phase ``bitcodec`` trains the bit encoder/decoder alone. Phase ``inn`` freezes
them and trains the invertible codec plus the posterior estimator. Each step
draws its randomness from ``default_rng([seed, iteration])`` so a resumed run
replays exactly the steps an uninterrupted run would have taken.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .bitcodec import bits_to_signal, signal_to_bits
from .checkpoint import CheckpointBundle, flatten_adam_state, restore_adam_state
from .degradation import RandomDegradation, transmit
from .model import IBSN, ModelConfig, pure_blue

log = logging.getLogger(__name__)

PHASES = ("bitcodec", "inn")


class TrainingError(RuntimeError):
    pass


class NonFiniteLossError(TrainingError, FloatingPointError):
    pass


@dataclass
class TrainConfig:
    phase: str = "bitcodec"
    lam: float = 10.0
    alpha: float = 100.0
    beta: float = 1.0
    lr: float = 1e-4
    betas: tuple = (0.9, 0.5)
    lr_halving_period: int = 30_000
    batch_size: int = 4
    iterations: int = 250_000
    blue_period: int = 10_000
    clip_norm: float = 10.0
    degrade: bool = True
    seed: int = 0
    log_every: int = 1
    sigma_range: tuple = (0.0, 5.0)
    alpha_range: tuple = (2.0, 4.0)
    quality_range: tuple = (70, 95)
    # optional bit-loss weight decay: lam until lam_decay_start, then log-linear to lam_final
    lam_final: float | None = None
    lam_decay_start: int = 0
    # bit-codec only: chance of pasting a random region from another batch image before the channel
    tamper_prob: float = 0.0
    tamper_area: tuple = (0.05, 0.35)
    # image-codec only: weight of the frozen bit decoder's loss on the received image
    bit_weight: float = 0.0

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ValueError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if min(self.lam, self.alpha, self.beta) <= 0:
            raise ValueError("loss weights must be positive")
        if self.lam_final is not None and self.lam_final <= 0:
            raise ValueError("lam_final must be positive")
        if not 0.0 <= self.tamper_prob <= 1.0:
            raise ValueError("tamper_prob must be in [0, 1]")

    @classmethod
    def desk(cls, phase, **overrides):
        """Settings for the 16-image, 64x64 CPU run.

        The bit codec needs a faster start and a bit-loss weight that backs
        off once the code is learned; with the full-scale schedule it ends
        near 20 dB container PSNR after 2K steps. Paste augmentation keeps
        the payload readable after large edits. The image codec sees the
        blue watermark every 5th step (it never learns it from 10 views) and
        is penalised for disturbing the frozen bit decoder.
        """
        if phase == "bitcodec":
            base = dict(iterations=2000, lr=1e-3, betas=(0.9, 0.999), lam_final=0.02, lam_decay_start=400,
                        tamper_prob=0.5)
        else:
            base = dict(iterations=5000, blue_period=5, bit_weight=1.0)
        base["phase"] = phase
        base.update(overrides)
        return cls(**base)

    def lam_at(self, iteration):
        if self.lam_final is None or iteration < self.lam_decay_start:
            return self.lam
        span = max(self.iterations - 1 - self.lam_decay_start, 1)
        t = min((iteration - self.lam_decay_start) / span, 1.0)
        return self.lam * (self.lam_final / self.lam) ** t

    def sampler(self):
        return RandomDegradation(
            sigma_range=tuple(self.sigma_range), alpha_range=tuple(self.alpha_range),
            quality_range=tuple(self.quality_range),
        )

    def to_dict(self):
        return asdict(self)


def learning_rate(iteration, lr0=1e-4, period=30_000):
    return lr0 * 0.5 ** (iteration // period)


def loss_cop(i_con, i_med, w_hat, w, lam=10.0):
    """``mse(i_con, i_med) + lam * mse(w_hat, w)`` with ``w`` in signal space."""
    return torch.mean((i_con - i_med) ** 2) + lam * torch.mean((w_hat - w) ** 2)


def loss_loc(i_ori_hat, i_ori, i_con, w_loc_hat, w_loc, alpha=100.0, beta=1.0):
    return (
        torch.mean(torch.abs(i_ori_hat - i_ori))
        + alpha * torch.mean((i_con - i_ori) ** 2)
        + beta * torch.mean(torch.abs(w_loc_hat - w_loc))
    )


def _as_images(dataset):
    images = torch.as_tensor(np.asarray(dataset)) if not torch.is_tensor(dataset) else dataset
    if images.dim() != 4 or len(images) == 0:
        raise TrainingError("dataset must be a nonempty (N, 3, H, W) stack")
    if images.dtype == torch.uint8:
        images = images.float() / 255.0
    return images.float()


class TrainLog:
    """Line-delimited JSON records, one per logged iteration."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.records = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def write(self, record):
        self.records.append(record)
        if self.path:
            with open(self.path, "a") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")


def _step_rng(seed, iteration):
    return np.random.default_rng([seed, iteration])


def _check_finite(loss, iteration, phase):
    if not math.isfinite(loss):
        raise NonFiniteLossError(f"non-finite loss at iteration {iteration} in phase {phase}")


def _paste_augment(config, rng, x):
    """``(donor, mask)`` for one bit-codec batch; no draws at all when augmentation is off."""
    h, w = x.shape[-2:]
    if config.tamper_prob <= 0:
        return None, torch.zeros(h, w)
    from .harness.tamper import SHAPES, make_mask

    masks = []
    for _ in range(len(x)):
        hit = rng.random() < config.tamper_prob
        shape = SHAPES[rng.integers(len(SHAPES))]
        area = float(rng.uniform(*config.tamper_area))
        seed = int(rng.integers(2**31 - 1))
        masks.append(make_mask(h, w, shape, area, seed) if hit else np.zeros((h, w)))
    mask = torch.from_numpy(np.stack(masks)).to(x.dtype)
    return torch.roll(x, 1, 0), mask


def _make_optimizer(params, config):
    return torch.optim.Adam(params, lr=config.lr, betas=tuple(config.betas))


def train_phase1(config: TrainConfig, dataset, model_config: ModelConfig | None = None,
                 resume: CheckpointBundle | None = None, log_path=None) -> CheckpointBundle:
    """Train the bit encoder/decoder on raw dataset images."""
    images = _as_images(dataset)
    if resume is not None:
        model = resume.build_model()
        start = resume.iteration
    else:
        torch.manual_seed(config.seed)
        model = IBSN(model_config or ModelConfig.desk())
        start = 0
    params = model.bit_parameters()
    opt = _make_optimizer(params, config)
    if resume is not None and resume.phase == "bitcodec":
        restore_adam_state(opt, resume.optimizer)
    sampler = config.sampler()
    tlog = TrainLog(log_path)
    n_bits = model.config.n_bits
    model.train()

    for it in range(start, config.iterations):
        rng = _step_rng(config.seed, it)
        idx = rng.integers(len(images), size=config.batch_size)
        x = images[idx]
        bits = torch.from_numpy(rng.integers(0, 2, size=(config.batch_size, n_bits)))
        w = bits_to_signal(bits)
        spec = sampler.sample(rng) if config.degrade else None
        for g in opt.param_groups:
            g["lr"] = learning_rate(it, config.lr, config.lr_halving_period)

        i_con = model.bem(x, w)
        donor, mask = _paste_augment(config, rng, x)
        i_rec = transmit(i_con, donor if donor is not None else i_con, mask, spec)
        w_hat = model.brm(i_rec)
        loss = loss_cop(i_con, x, w_hat, w, config.lam_at(it))
        _check_finite(loss.item(), it, "bitcodec")
        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(params, config.clip_norm)
        opt.step()

        if it % config.log_every == 0 or it == config.iterations - 1:
            with torch.no_grad():
                acc = (signal_to_bits(w_hat) == bits).float().mean().item()
                mse = torch.mean((i_con - x) ** 2).item()
            tlog.write({
                "phase": "bitcodec", "iteration": it, "loss": loss.item(), "bit_accuracy": acc,
                "psnr": 10 * math.log10(1.0 / max(mse, 1e-12)), "degradation": spec.to_text() if spec else "clean",
            })

    bundle = CheckpointBundle.from_model(model, phase="bitcodec", iteration=config.iterations,
                                         train_config=config.to_dict(), optimizer=flatten_adam_state(opt))
    bundle.log = tlog.records
    return bundle


def train_phase2(config: TrainConfig, dataset, phase1: CheckpointBundle,
                 resume: CheckpointBundle | None = None, log_path=None) -> CheckpointBundle:
    """Freeze the bit codec and train the image codec and posterior estimator."""
    if phase1 is None or phase1.phase not in ("bitcodec", "inn"):
        raise TrainingError("phase 2 requires a phase-1 checkpoint")
    images = _as_images(dataset)
    source = resume if resume is not None else phase1
    model = source.build_model()
    start = resume.iteration if resume is not None else 0
    if resume is None:
        torch.manual_seed(config.seed + 1)

    frozen = {k: v.clone() for k, v in model.state_dict().items() if k.startswith(("bem.", "brm."))}
    for p in model.bit_parameters():
        p.requires_grad_(False)
    params = model.image_parameters()
    opt = _make_optimizer(params, config)
    if resume is not None and resume.phase == "inn":
        restore_adam_state(opt, resume.optimizer)
    sampler = config.sampler()
    tlog = TrainLog(log_path)
    n_bits = model.config.n_bits
    model.train()
    # the frozen codec always runs in inference mode
    model.bem.eval()
    model.brm.eval()
    no_tamper = torch.zeros(images.shape[-2:])

    for it in range(start, config.iterations):
        rng = _step_rng(config.seed, it)
        idx = rng.integers(len(images), size=config.batch_size)
        x = images[idx]
        if config.blue_period and it % config.blue_period == 0:
            w_loc = pure_blue(x.shape)
        else:
            w_loc = images[rng.integers(len(images), size=config.batch_size)]
        bits = torch.from_numpy(rng.integers(0, 2, size=(config.batch_size, n_bits)))
        spec = sampler.sample(rng) if config.degrade else None
        for g in opt.param_groups:
            g["lr"] = learning_rate(it, config.lr, config.lr_halving_period)

        w = bits_to_signal(bits)
        i_con, _ = model.encode(x, w_loc, w)
        i_rec = transmit(i_con, i_con, no_tamper, spec)
        i_ori_hat, w_loc_hat = model.inn.reveal(i_rec, model.ppem(i_rec))
        loss = loss_loc(i_ori_hat, x, i_con, w_loc_hat, w_loc, config.alpha, config.beta)
        if config.bit_weight > 0:
            # keeps the hidden image from disturbing the frozen bit decoder
            loss = loss + config.bit_weight * torch.mean((model.brm(i_rec) - w) ** 2)
        _check_finite(loss.item(), it, "inn")
        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(params, config.clip_norm)
        opt.step()

        if it % config.log_every == 0 or it == config.iterations - 1:
            with torch.no_grad():
                mse_con = torch.mean((i_con - x) ** 2).item()
                mse_wm = torch.mean((w_loc_hat - w_loc) ** 2).item()
            tlog.write({
                "phase": "inn", "iteration": it, "loss": loss.item(),
                "psnr_container": 10 * math.log10(1.0 / max(mse_con, 1e-12)),
                "psnr_watermark": 10 * math.log10(1.0 / max(mse_wm, 1e-12)),
                "degradation": spec.to_text() if spec else "clean",
            })

    for k, v in model.state_dict().items():
        if k in frozen and not torch.equal(frozen[k], v):
            raise TrainingError(f"frozen bit-codec parameter {k} changed during phase 2")

    bundle = CheckpointBundle.from_model(model, phase="inn", iteration=config.iterations,
                                         train_config=config.to_dict(), optimizer=flatten_adam_state(opt))
    bundle.log = tlog.records
    return bundle
