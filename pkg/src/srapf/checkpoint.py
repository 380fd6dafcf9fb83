"""Self-describing model checkpoints.

A checkpoint is a single ``.npz`` holding every parameter array under a
``param/<name>`` key plus a ``_meta`` JSON blob with the format version, the
model architecture, and training provenance (stage tag, epoch, validation
accuracy, config hash). Loading rebuilds the model from the stored
architecture; no outside context is needed. See docs/checkpoint.md.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .model import DualEncoderModel, ModelConfig

CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    """A model snapshot with the provenance needed to trust it later."""

    model: DualEncoderModel
    stage: str
    epoch: int
    id_val_top1: float
    config_hash: str
    trainable_groups: tuple = ()


def config_hash(config) -> str:
    """Stable hash of a (possibly nested) dataclass or plain mapping."""
    if dataclasses.is_dataclass(config) and not isinstance(config, type):
        config = dataclasses.asdict(config)
    blob = json.dumps(config, sort_keys=True, default=repr)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "stage": ckpt.stage,
        "epoch": ckpt.epoch,
        "id_val_top1": ckpt.id_val_top1,
        "config_hash": ckpt.config_hash,
        "trainable_groups": sorted(ckpt.trainable_groups),
        "model_config": dataclasses.asdict(ckpt.model.config),
    }
    arrays = {f"param/{n}": v for n, v in ckpt.model.state_dict().items()}
    with open(path, "wb") as fh:
        np.savez(fh, _meta=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path) -> Checkpoint:
    with np.load(path, allow_pickle=False) as data:
        if "_meta" not in data:
            raise ValueError(f"{path}: not a checkpoint (missing _meta)")
        meta = json.loads(str(data["_meta"]))
        version = meta.get("version")
        if version != CHECKPOINT_VERSION:
            raise ValueError(
                f"{path}: unsupported checkpoint version {version!r} "
                f"(this build reads version {CHECKPOINT_VERSION})")
        model = DualEncoderModel(ModelConfig(**meta["model_config"]), seed=0)
        state = {}
        for key in data.files:
            if key.startswith("param/"):
                state[key[len("param/"):]] = data[key]
    model.load_state_dict(state)
    return Checkpoint(model=model, stage=meta["stage"], epoch=meta["epoch"],
                      id_val_top1=meta["id_val_top1"],
                      config_hash=meta["config_hash"],
                      trainable_groups=tuple(meta["trainable_groups"]))
