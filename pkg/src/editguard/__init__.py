"""Dual image/bit watermarking for tamper localization and copyright recovery."""
from .checkpoint import CheckpointBundle
from .degradation import DegradationSpec, transmit
from .estimator import EditGuard
from .forensics import Case, ForensicVerdict
from .model import IBSN, ModelConfig
from .training import TrainConfig, train_phase1, train_phase2

__version__ = "0.1.0"

__all__ = [
    "Case", "CheckpointBundle", "DegradationSpec", "EditGuard", "ForensicVerdict", "IBSN", "ModelConfig",
    "TrainConfig", "train_phase1", "train_phase2", "transmit",
]
