"""Structured masked-autoencoder pre-training for vehicle images."""
from .backbone import MaskedAutoencoder, TokenBatch
from .config import BackboneConfig, TrainConfig, preset
from .estimator import VehicleMAEPretrainer
from .geometry import Annotation, AnnotationKind, build_patch_grid, compute_symmetry_pairs
from .losses import LossBundle, LossWeights, total_loss
from .masking import MaskConfig, MaskPlan, MaskStrategy, make_mask_plan

__version__ = "0.1.0"

__all__ = [
    "Annotation",
    "AnnotationKind",
    "BackboneConfig",
    "LossBundle",
    "LossWeights",
    "MaskConfig",
    "MaskPlan",
    "MaskStrategy",
    "MaskedAutoencoder",
    "TokenBatch",
    "TrainConfig",
    "VehicleMAEPretrainer",
    "build_patch_grid",
    "compute_symmetry_pairs",
    "make_mask_plan",
    "preset",
    "total_loss",
]
