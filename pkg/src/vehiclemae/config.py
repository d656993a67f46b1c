"""Configuration dataclasses and the ``tiny`` / ``paper`` presets."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Optional

from .exceptions import ValidationError
from .losses import LossWeights
from .masking import MaskConfig


@dataclass(frozen=True)
class BackboneConfig:
    image_size: int = 224
    patch_size: int = 16
    in_chans: int = 3
    enc_dim: int = 768
    enc_depth: int = 12
    enc_heads: int = 12
    dec_dim: int = 512
    dec_depth: int = 8
    dec_heads: int = 16
    dist_dim: int = 1024
    teacher_dim: int = 512
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValidationError(f"patch size {self.patch_size} does not divide {self.image_size}")
        if self.enc_dim % self.enc_heads or self.dec_dim % self.dec_heads:
            raise ValidationError("feature widths must be divisible by head counts")

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.in_chans


PAPER_BACKBONE = BackboneConfig()
TINY_BACKBONE = BackboneConfig(
    image_size=64, enc_dim=64, enc_depth=2, enc_heads=4, dec_dim=64, dec_depth=1, dec_heads=4
)


@dataclass(frozen=True)
class TrainConfig:
    backbone: BackboneConfig = TINY_BACKBONE
    mask: MaskConfig = MaskConfig()
    weights: LossWeights = LossWeights()
    lr: float = 2e-4
    weight_decay: float = 0.04
    betas: tuple = (0.9, 0.95)
    warmup_fraction: float = 0.05
    batch_size: int = 16
    epochs: int = 5
    seed: int = 0
    tau: float = 1.0
    corpus_sample: int = 256
    # "toy" or a path to a TorchScript teacher archive
    teacher: str = "toy"
    teacher_seed: int = 0
    keep_all_checkpoints: bool = False

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "backbone" in d and isinstance(d["backbone"], dict):
            d["backbone"] = BackboneConfig(**d["backbone"])
        if "mask" in d and isinstance(d["mask"], dict):
            d["mask"] = MaskConfig(**d["mask"])
        if "weights" in d and isinstance(d["weights"], dict):
            d["weights"] = LossWeights(**d["weights"])
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def preset(name: str, **overrides) -> TrainConfig:
    """Desk-scale ``tiny`` or paper-scale ``paper`` training configuration."""
    if name == "tiny":
        base = TrainConfig(backbone=TINY_BACKBONE, lr=1e-3, batch_size=16, epochs=5)
    elif name == "paper":
        base = TrainConfig(backbone=PAPER_BACKBONE, lr=2e-4, batch_size=512, epochs=100)
    else:
        raise ValidationError(f"unknown preset {name!r}; expected 'tiny' or 'paper'")
    return dataclasses.replace(base, **overrides) if overrides else base


def load_config(path: str, preset_name: Optional[str] = None) -> TrainConfig:
    """Read a JSON config, layered over a preset when one is named."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    base = preset(preset_name or raw.pop("preset", "tiny")).to_dict()
    raw.pop("preset", None)
    for key in ("backbone", "mask", "weights"):
        if isinstance(raw.get(key), dict):
            base[key].update(raw.pop(key))
    base.update(raw)
    return TrainConfig.from_dict(base)
