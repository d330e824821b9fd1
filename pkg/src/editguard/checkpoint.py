"""Versioned checkpoint files.

A checkpoint is a single safetensors file. Parameter tensors are stored under
``model.<name>``, optimizer moments (for resuming) under ``optim.<i>.<key>``,
and everything else (format version, model config, training state, wavelet
band order) goes into one JSON string in the file metadata. Saving the same
bundle twice yields identical bytes.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import torch
from safetensors.torch import load_file, save_file
from safetensors import safe_open

from .model import IBSN, ModelConfig
from .wavelet import SUBBAND_ORDER

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class CheckpointBundle:
    model_config: dict
    state: dict
    phase: str = "init"
    iteration: int = 0
    train_config: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: IBSN, **kwargs):
        state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        return cls(model.config.to_dict(), state, **kwargs)

    def build_model(self) -> IBSN:
        model = IBSN(ModelConfig.from_dict(self.model_config))
        model.load_state_dict(self.state)
        return model

    def header(self):
        return {
            "format_version": FORMAT_VERSION,
            "subband_order": list(SUBBAND_ORDER),
            "model_config": self.model_config,
            "phase": self.phase,
            "iteration": self.iteration,
            "train_config": self.train_config,
            "optimizer_steps": {k: v for k, v in self.optimizer.items() if not torch.is_tensor(v)},
        }

    def save(self, path):
        tensors = {f"model.{k}": v.contiguous() for k, v in self.state.items()}
        tensors.update({f"optim.{k}": v.contiguous() for k, v in self.optimizer.items() if torch.is_tensor(v)})
        meta = {"editguard": json.dumps(self.header(), sort_keys=True)}
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_file(tensors, str(path), metadata=meta)
        return path

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.is_file():
            raise CheckpointError(f"no checkpoint at {path}")
        with safe_open(str(path), framework="pt") as f:
            meta = f.metadata() or {}
        if "editguard" not in meta:
            raise CheckpointError(f"{path} is not an editguard checkpoint")
        header = json.loads(meta["editguard"])
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')}")
        if tuple(header.get("subband_order", ())) != SUBBAND_ORDER:
            raise CheckpointError("checkpoint uses a different wavelet band order")
        tensors = load_file(str(path))
        state = {k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")}
        optim = {k[len("optim."):]: v for k, v in tensors.items() if k.startswith("optim.")}
        optim.update(header.get("optimizer_steps", {}))
        return cls(header["model_config"], state, header["phase"], header["iteration"],
                   header.get("train_config", {}), optim)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def flatten_adam_state(optimizer: torch.optim.Optimizer) -> dict:
    """Adam moments keyed ``<param index>.<name>``; step counts stay Python ints."""
    out = {}
    sd = optimizer.state_dict()
    for idx, st in sd["state"].items():
        for key, value in st.items():
            if key == "step":
                out[f"{idx}.step"] = int(value)
            else:
                out[f"{idx}.{key}"] = value.detach().clone()
    return out


def restore_adam_state(optimizer: torch.optim.Optimizer, flat: dict):
    if not flat:
        return
    sd = optimizer.state_dict()
    state = {}
    for key, value in flat.items():
        idx, name = key.split(".", 1)
        entry = state.setdefault(int(idx), {})
        entry[name] = torch.tensor(float(value)) if name == "step" else value
    sd["state"] = state
    optimizer.load_state_dict(sd)
