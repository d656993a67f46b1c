"""Pre-training objectives.

Every function is pure and differentiable through torch autograd, so the same
code runs in float32 during training and in float64 under gradient checks.
Probability inputs are clamped at ``EPS`` before taking logs.
"""
from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields
from typing import Optional

import torch

from .exceptions import EmptyBatch, EmptyMaskSet, NonFinite, ShapeMismatch, ZeroVector

EPS = 1e-12
COMPONENTS = ("l_r", "l_mim", "l_cls", "l_cf", "l_cs", "l_vt")


@dataclass(frozen=True)
class LossWeights:
    l_r: float = 4.0
    l_mim: float = 0.02
    l_cls: float = 0.02
    l_cf: float = 1.0
    l_cs: float = 1.0
    l_vt: float = 1.0

    def __post_init__(self):
        if any(w < 0 for w in astuple(self)):
            raise ValueError(f"loss weights must be nonnegative: {self}")


PAPER_WEIGHTS = LossWeights()
UNIT_WEIGHTS = LossWeights(1.0, 1.0, 1.0, 1.0, 1.0, 1.0)


@dataclass(frozen=True)
class LossBundle:
    l_r: float
    l_mim: float
    l_cls: float
    l_cf: float
    l_cs: float
    l_vt: float
    total: float

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _log(p):
    return torch.log(p.clamp_min(EPS))


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape {tuple(a.shape)} != {tuple(b.shape)}")


def reconstruction_loss(targets, predictions):
    """Mean squared error over the masked pixel values."""
    _check_same_shape(targets, predictions)
    if targets.numel() == 0:
        raise EmptyMaskSet("no masked pixels to reconstruct")
    return ((targets - predictions) ** 2).mean()


def mim_loss(teacher_rows, student_rows):
    """Cross-entropy summed over masked patches (last dim is the distribution).

    Rows are ``[N_p, K]`` or ``[B, N_p, K]``; batched input is averaged over B.
    """
    _check_same_shape(teacher_rows, student_rows)
    ce = -(teacher_rows * _log(student_rows)).sum(dim=-1)
    per_sample = ce.sum(dim=-1) if ce.dim() >= 1 else ce
    return per_sample.mean() if per_sample.dim() else per_sample


def cls_distill_loss(teacher_cls, student_cls):
    """Cross-entropy between class-token distributions, ``[K]`` or ``[B, K]``."""
    _check_same_shape(teacher_cls, student_cls)
    return (-(teacher_cls * _log(student_cls)).sum(dim=-1)).mean()


def _unit(v, what):
    norm = v.norm(dim=-1, keepdim=True)
    if bool((norm < EPS).any()):
        raise ZeroVector(f"{what} has (near) zero norm")
    return v / norm


def clip_feature_loss(student_feature, teacher_feature):
    """Squared distance between the unit-normalised features (mean over a batch)."""
    _check_same_shape(student_feature, teacher_feature)
    diff = _unit(student_feature, "student feature") - _unit(teacher_feature, "teacher feature")
    return (diff**2).sum(dim=-1).mean()


def similarity_distribution(image_feature, texts, tau: float = 1.0):
    """Softmax over text similarities; ``image_feature`` is ``[d]`` or ``[B, d]``."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if texts.dim() != 2 or texts.shape[0] < 1:
        raise ShapeMismatch(f"texts must be a non-empty [m, d] matrix, got {tuple(texts.shape)}")
    return torch.softmax(image_feature @ texts.T / tau, dim=-1)


def kl_divergence(p, q):
    return (p * (_log(p) - _log(q))).sum(dim=-1)


def entropy(p):
    return -(p * _log(p)).sum(dim=-1)


def similarity_consistency_loss(teacher_dist, student_dist):
    """KL(teacher || student) + H(student), in nats, averaged over a batch."""
    _check_same_shape(teacher_dist, student_dist)
    return (kl_divergence(teacher_dist, student_dist) + entropy(student_dist)).mean()


def semantic_consistency_loss(student_feature, teacher_feature, texts, tau: float = 1.0):
    """Normalise features and texts, build both similarity distributions, compare."""
    w = _unit(texts, "text embedding")
    s = similarity_distribution(_unit(student_feature, "student feature"), w, tau)
    t = similarity_distribution(_unit(teacher_feature, "teacher feature"), w, tau)
    return similarity_consistency_loss(t, s)


def vision_text_contrastive_loss(image_features, text_features):
    """Cosine embedding loss with all-positive targets: mean of 1 - cos."""
    _check_same_shape(image_features, text_features)
    if image_features.dim() == 1:
        image_features = image_features[None]
        text_features = text_features[None]
    if image_features.shape[0] == 0:
        raise EmptyBatch("no image/prompt pairs in batch")
    cos = (_unit(image_features, "image feature") * _unit(text_features, "text feature")).sum(-1)
    return (1.0 - cos).mean()


def _is_finite(value) -> bool:
    if isinstance(value, torch.Tensor):
        return bool(torch.isfinite(value).all())
    return math.isfinite(value)


def weighted_total(components: dict, weights: LossWeights):
    """Weighted sum in fixed component order; works on floats or tensors."""
    bad = {k: components[k] for k in COMPONENTS if not _is_finite(components[k])}
    if bad:
        raise NonFinite(f"non-finite loss components: {sorted(bad)}", components=bad)
    total = 0.0
    for name in COMPONENTS:
        total = total + getattr(weights, name) * components[name]
    return total


def total_loss(components: dict, weights: Optional[LossWeights] = None) -> LossBundle:
    weights = weights or PAPER_WEIGHTS
    total = weighted_total(components, weights)
    as_float = {k: float(components[k]) for k in COMPONENTS}
    return LossBundle(total=float(total), **as_float)
