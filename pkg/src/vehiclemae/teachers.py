"""Frozen vision-language teachers and contour maps.

Two teacher implementations share one interface: a deterministic
``ToyTeacher`` that needs no downloads, and ``TorchScriptTeacher`` which wraps
an exported model exposing ``encode_image`` and ``encode_text``.
"""
from __future__ import annotations

import abc
import hashlib
import os
import re
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage

from .exceptions import ShapeMismatch, TeacherUnavailable

TEACHER_DIM = 512
_LUMA = np.array([0.299, 0.587, 0.114])


class Teacher(abc.ABC):
    """Frozen image/text encoder producing ``dim``-wide embeddings."""

    dim: int = TEACHER_DIM

    @abc.abstractmethod
    def image_embed(self, images: np.ndarray) -> np.ndarray:
        """``[B, H, W, 3]`` images in [0, 1] -> ``[B, dim]``."""

    @abc.abstractmethod
    def text_embed(self, texts: Sequence[str]) -> np.ndarray:
        """``m`` strings -> ``[m, dim]``; an empty list gives a ``[0, dim]`` matrix."""


class ToyTeacher(Teacher):
    """Seeded linear map of 8x8 average-pooled pixels; bag of hashed word vectors for text."""

    def __init__(self, seed: int = 0, dim: int = TEACHER_DIM, pool: int = 8):
        self.seed = int(seed)
        self.dim = dim
        self.pool = pool
        rng = np.random.default_rng([self.seed, 0x7EAC])
        n_in = pool * pool * 3
        self.weight = rng.standard_normal((n_in, dim)) / np.sqrt(n_in)
        self.bias = rng.standard_normal(dim) * 0.1
        self.weight.setflags(write=False)
        self.bias.setflags(write=False)
        self._word_cache = {}

    def image_embed(self, images):
        x = torch.as_tensor(np.asarray(images, dtype=np.float64))
        if x.dim() == 3:
            x = x[None]
        if x.dim() != 4 or x.shape[-1] != 3:
            raise ShapeMismatch(f"expected [B, H, W, 3] images, got {tuple(x.shape)}")
        pooled = F.adaptive_avg_pool2d(x.permute(0, 3, 1, 2), self.pool)
        flat = pooled.permute(0, 2, 3, 1).reshape(x.shape[0], -1).numpy()
        return flat @ self.weight + self.bias

    def _word(self, word: str) -> np.ndarray:
        vec = self._word_cache.get(word)
        if vec is None:
            digest = hashlib.blake2b(f"{self.seed}:{word}".encode(), digest_size=8).digest()
            vec = np.random.default_rng(int.from_bytes(digest, "little")).standard_normal(self.dim)
            self._word_cache[word] = vec
        return vec

    def text_embed(self, texts):
        out = np.zeros((len(texts), self.dim))
        for row, text in enumerate(texts):
            words = re.findall(r"[a-z0-9]+", text.lower()) or ["<empty>"]
            out[row] = np.sum([self._word(w) for w in words], axis=0)
        return out


class TorchScriptTeacher(Teacher):
    """Loads a TorchScript archive with ``encode_image`` and ``encode_text`` methods.

    ``encode_image`` receives a float32 ``[B, 3, H, W]`` tensor in [0, 1];
    ``encode_text`` receives a list of strings.
    """

    def __init__(self, path: str):
        if not os.path.isfile(path):
            raise TeacherUnavailable(f"teacher weights not found: {path}")
        try:
            self.module = torch.jit.load(path, map_location="cpu").eval()
        except Exception as exc:  # noqa: BLE001 - any load failure means no teacher
            raise TeacherUnavailable(f"could not load teacher from {path}: {exc}") from exc
        for p in self.module.parameters():
            p.requires_grad_(False)
        self.path = path
        probe = self.text_embed(["probe"])
        self.dim = probe.shape[1]

    @torch.no_grad()
    def image_embed(self, images):
        x = torch.as_tensor(np.asarray(images, dtype=np.float32))
        if x.dim() == 3:
            x = x[None]
        return self.module.encode_image(x.permute(0, 3, 1, 2).contiguous()).double().numpy()

    @torch.no_grad()
    def text_embed(self, texts):
        if not texts:
            return np.zeros((0, getattr(self, "dim", TEACHER_DIM)))
        return self.module.encode_text(list(texts)).double().numpy()


def load_teacher(source: str = "toy", seed: int = 0) -> Teacher:
    if source == "toy":
        return ToyTeacher(seed=seed)
    return TorchScriptTeacher(source)


def sobel_contour(image: np.ndarray) -> np.ndarray:
    """Sobel gradient magnitude of the grayscale image, scaled to [0, 1].

    Borders replicate the edge pixels. A flat image maps to all zeros.
    """
    image = np.asarray(image, dtype=np.float64)
    gray = image @ _LUMA if image.ndim == 3 else image
    gx = ndimage.sobel(gray, axis=1, mode="nearest")
    gy = ndimage.sobel(gray, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak <= 1e-12:
        return np.zeros_like(gray)
    return mag / peak


def encode_contour(contours, model):
    """Encode ``[B, H, W]`` (or ``[H, W]``) contour maps with the model's own encoder."""
    x = torch.as_tensor(contours, dtype=next(model.parameters()).dtype)
    if x.dim() == 2:
        x = x[None]
    return model.encode_contour(x)
