"""Central finite-difference checks of the autograd gradients of every loss."""
from __future__ import annotations

from typing import Callable, Dict, List, Sequence

import numpy as np
import torch

from . import losses as L

STEP = 1e-5
TOLERANCE = 1e-4


def numeric_gradient(f: Callable, inputs: Sequence[np.ndarray], h: float = STEP) -> List[np.ndarray]:
    """Central differences of scalar ``f`` w.r.t. each float64 input array."""
    base = [np.array(x, dtype=np.float64) for x in inputs]
    grads = []
    for k, x in enumerate(base):
        g = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            orig = x[idx]
            x[idx] = orig + h
            plus = float(f(*[torch.from_numpy(v.copy()) for v in base]))
            x[idx] = orig - h
            minus = float(f(*[torch.from_numpy(v.copy()) for v in base]))
            x[idx] = orig
            g[idx] = (plus - minus) / (2 * h)
        grads.append(g)
    return grads


def analytic_gradient(f: Callable, inputs: Sequence[np.ndarray]) -> List[np.ndarray]:
    tensors = [torch.tensor(np.asarray(x, dtype=np.float64), requires_grad=True) for x in inputs]
    f(*tensors).backward()
    return [t.grad.numpy() for t in tensors]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def _softmax(rng, *shape):
    z = rng.standard_normal(shape)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def loss_cases(rng: np.random.Generator, width: int = 8, m: int = 5, k: int = 7) -> Dict[str, tuple]:
    """One random instance per loss: ``name -> (function, inputs)``."""
    return {
        "l_r": (L.reconstruction_loss, [rng.uniform(0, 1, width), rng.uniform(0, 1, width)]),
        "l_mim": (L.mim_loss, [_softmax(rng, 3, k), _softmax(rng, 3, k)]),
        "l_cls": (L.cls_distill_loss, [_softmax(rng, k), _softmax(rng, k)]),
        "l_cf": (L.clip_feature_loss, [rng.standard_normal(width), rng.standard_normal(width)]),
        "l_cs": (
            L.semantic_consistency_loss,
            [rng.standard_normal(width), rng.standard_normal(width), rng.standard_normal((m, width))],
        ),
        "l_vt": (
            L.vision_text_contrastive_loss,
            [rng.standard_normal((4, width)), rng.standard_normal((4, width))],
        ),
    }


def check_all(seed: int = 0, instances: int = 20) -> Dict[str, float]:
    """Max relative error per loss over ``instances`` random draws."""
    rng = np.random.default_rng(seed)
    worst = {name: 0.0 for name in L.COMPONENTS}
    for _ in range(instances):
        for name, (fn, inputs) in loss_cases(rng).items():
            a = analytic_gradient(fn, inputs)
            n = numeric_gradient(fn, inputs)
            err = max(relative_error(ai, ni) for ai, ni in zip(a, n))
            worst[name] = max(worst[name], err)
    return worst
