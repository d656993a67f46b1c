"""scikit-learn style front end: ``VehicleMAEPretrainer().fit(X).transform(X)``."""
from __future__ import annotations

import dataclasses
from typing import Optional, Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .config import TrainConfig, preset
from .data import PretrainData, quantize
from .exceptions import ValidationError
from .geometry import Annotation
from .losses import LossWeights
from .masking import MaskConfig
from .teachers import Teacher, sobel_contour
from .textgen import generate_prompt, synth_attribute_corpus
from .training import train


def check_images(X, image_size: Optional[int] = None) -> np.ndarray:
    """Validate a stack of RGB images: ``[n, H, W, 3]``, finite, values in [0, 1]."""
    X = np.asarray(X, dtype=np.float32)
    if X.ndim == 3 and X.shape[-1] == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[-1] != 3:
        raise ValidationError(f"expected images of shape [n, H, W, 3], got {X.shape}")
    if X.shape[0] == 0:
        raise ValidationError("no images given")
    if image_size is not None and X.shape[1:3] != (image_size, image_size):
        raise ValidationError(f"expected {image_size}x{image_size} images, got {X.shape[1]}x{X.shape[2]}")
    if not np.isfinite(X).all():
        raise ValidationError("images contain NaN or infinite values")
    if X.min() < 0.0 or X.max() > 1.0:
        raise ValidationError("pixel values must lie in [0, 1]")
    return X


def check_annotations(annotations, n: int, height: int, width: int) -> list:
    if annotations is None:
        return [Annotation() for _ in range(n)]
    out = []
    for a in annotations:
        if a is None:
            a = Annotation()
        elif isinstance(a, dict):
            a = Annotation(a.get("box"), a.get("angle"))
        elif not isinstance(a, Annotation):
            raise ValidationError(f"unsupported annotation {a!r}")
        a.check_within(height, width)
        out.append(a)
    if len(out) != n:
        raise ValidationError(f"{len(out)} annotations for {n} images")
    return out


class VehicleMAEPretrainer(TransformerMixin, BaseEstimator):
    """Structured masked-autoencoder pre-training as a transformer.

    ``fit`` pre-trains on images (with optional annotations, contour maps and
    an attribute corpus); ``transform`` returns the encoder CLS feature of each
    unmasked image.
    """

    def __init__(
        self,
        preset: str = "tiny",
        image_size: Optional[int] = None,
        mask_ratio: float = 0.75,
        fg_delta: float = 0.10,
        loss_weights: Sequence[float] = (4.0, 0.02, 0.02, 1.0, 1.0, 1.0),
        lr: Optional[float] = None,
        weight_decay: float = 0.04,
        batch_size: Optional[int] = None,
        epochs: Optional[int] = None,
        tau: float = 1.0,
        teacher: object = "toy",
        random_state: int = 0,
    ):
        self.preset = preset
        self.image_size = image_size
        self.mask_ratio = mask_ratio
        self.fg_delta = fg_delta
        self.loss_weights = loss_weights
        self.lr = lr
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.tau = tau
        self.teacher = teacher
        self.random_state = random_state

    def _make_config(self) -> TrainConfig:
        base = preset(self.preset)
        backbone = base.backbone
        if self.image_size is not None:
            backbone = dataclasses.replace(backbone, image_size=int(self.image_size))
        return dataclasses.replace(
            base,
            backbone=backbone,
            mask=MaskConfig(self.mask_ratio, self.fg_delta),
            weights=LossWeights(*self.loss_weights),
            lr=base.lr if self.lr is None else float(self.lr),
            weight_decay=float(self.weight_decay),
            batch_size=base.batch_size if self.batch_size is None else int(self.batch_size),
            epochs=base.epochs if self.epochs is None else int(self.epochs),
            tau=float(self.tau),
            teacher=self.teacher if isinstance(self.teacher, str) else "toy",
            seed=int(self.random_state),
        )

    def fit(self, X, y=None, annotations=None, contours=None, corpus=None, out_dir=None):
        config = self._make_config()
        X = check_images(X, config.backbone.image_size)
        n, h, w, _ = X.shape
        anns = check_annotations(annotations, n, h, w)
        if contours is None:
            contours = np.stack([quantize(sobel_contour(img)) for img in X])
        contours = np.asarray(contours, dtype=np.float32)
        prompts = [p.text if p else None for p in (generate_prompt(a, (h, w)) for a in anns)]
        corpus = list(corpus) if corpus is not None else synth_attribute_corpus(64, config.seed)
        data = PretrainData(X, contours, anns, prompts, corpus)
        teacher = self.teacher if isinstance(self.teacher, Teacher) else None
        result = train(config, data, out_dir=out_dir, teacher=teacher)
        self.config_ = config
        self.model_ = result.state.model.eval()
        self.metrics_ = result.metrics
        self.n_features_out_ = config.backbone.enc_dim
        return self

    @torch.no_grad()
    def transform(self, X):
        check_is_fitted(self, "model_")
        X = check_images(X, self.config_.backbone.image_size)
        feats = self.model_.encode_full(torch.as_tensor(X)).features[:, 0]
        return feats.numpy().astype(np.float64)

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "model_")
        return np.asarray([f"cls{i}" for i in range(self.n_features_out_)], dtype=object)
