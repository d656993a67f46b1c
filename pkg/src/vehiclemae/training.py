"""Training step, epoch loop, checkpoints and the metrics stream.

All randomness is counter-based: mask plans are seeded from
(seed, epoch, sample id), shuffles from (seed, epoch), and corpus subsamples
from (seed, step). Resuming therefore only needs the epoch and step counters
plus model and optimizer state.
"""
from __future__ import annotations

import io
import json
import logging
import math
import os
import sys
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import torch

from . import losses as L
from .backbone import MaskedAutoencoder, masks_from_plans, patchify
from .config import TrainConfig
from .data import PretrainData
from .exceptions import NonFinite, ValidationError
from .geometry import build_patch_grid
from .masking import MaskConfig, make_mask_plan, derive_seed
from .teachers import Teacher, load_teacher

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "vehiclemae-checkpoint/1"
CHECKPOINT_NAME = "checkpoint.pt"
METRICS_NAME = "metrics.jsonl"


@dataclass
class TeacherCache:
    """Frozen teacher outputs for a dataset; computed once since the teacher never changes."""

    image_embeds: torch.Tensor  # [n, d]
    prompt_embeds: torch.Tensor  # [n, d], zero rows where there is no prompt
    has_pair: torch.Tensor  # [n] bool
    corpus_embeds: torch.Tensor  # [m, d] unit rows

    @classmethod
    def build(cls, teacher: Teacher, data: PretrainData, dtype=torch.float32) -> "TeacherCache":
        image_embeds = torch.as_tensor(teacher.image_embed(data.images), dtype=dtype)
        has_pair = torch.tensor([p is not None for p in data.prompts], dtype=torch.bool)
        prompt_embeds = torch.zeros_like(image_embeds)
        texts = [p for p in data.prompts if p is not None]
        if texts:
            prompt_embeds[has_pair] = torch.as_tensor(teacher.text_embed(texts), dtype=dtype)
        corpus = torch.as_tensor(teacher.text_embed(list(data.corpus)), dtype=dtype)
        if corpus.shape[0]:
            corpus = corpus / corpus.norm(dim=-1, keepdim=True)
        return cls(image_embeds, prompt_embeds, has_pair, corpus)


@dataclass
class Batch:
    images: torch.Tensor  # [B, H, W, 3]
    contours: torch.Tensor  # [B, H, W]
    masks: torch.Tensor  # [B, N] bool
    teacher_image: torch.Tensor  # [B, d]
    prompt_embeds: torch.Tensor  # [B, d]
    has_pair: torch.Tensor  # [B] bool
    corpus: torch.Tensor  # [m, d]
    strategies: Counter = field(default_factory=Counter)
    unresolved_pairs: int = 0


def compute_losses(model: MaskedAutoencoder, batch: Batch, tau: float = 1.0) -> dict:
    """Forward pass and every loss component as scalar tensors."""
    out = model(batch.images, batch.masks)
    masks = batch.masks

    target = patchify(batch.images, model.config.patch_size)
    l_r = L.reconstruction_loss(target[masks], out.pixels[masks])

    # contour side is a constant target for this step
    with torch.no_grad():
        skeleton = model.encode_contour(batch.contours)
        teacher_patch = model.project_patch_distribution(skeleton.features[:, 1:], "teacher")
        teacher_cls = model.project_cls_distribution(skeleton.features[:, 0], "teacher")
    b, n = masks.shape
    decoded = out.decoded.features
    student_patch = model.project_patch_distribution(decoded[:, 1:], "student")
    k = student_patch.shape[-1]
    l_mim = L.mim_loss(teacher_patch[masks].reshape(b, -1, k), student_patch[masks].reshape(b, -1, k))
    l_cls = L.cls_distill_loss(teacher_cls, model.project_cls_distribution(decoded[:, 0], "student"))

    semantic = model.semantic_head(decoded[:, 0])
    l_cf = L.clip_feature_loss(semantic, batch.teacher_image)
    if batch.corpus.shape[0]:
        l_cs = L.semantic_consistency_loss(semantic, batch.teacher_image, batch.corpus, tau)
    else:
        l_cs = semantic.new_zeros(())

    if bool(batch.has_pair.any()):
        aligned = model.text_align_head(out.encoded.features[:, 0])
        l_vt = L.vision_text_contrastive_loss(aligned[batch.has_pair], batch.prompt_embeds[batch.has_pair])
    else:
        l_vt = semantic.new_zeros(())
    return {"l_r": l_r, "l_mim": l_mim, "l_cls": l_cls, "l_cf": l_cf, "l_cs": l_cs, "l_vt": l_vt}


def make_batch(
    data: PretrainData,
    cache: TeacherCache,
    indices,
    config: TrainConfig,
    epoch: int,
    step: int,
    dtype=torch.float32,
) -> Batch:
    h, w = data.images.shape[1:3]
    grid = build_patch_grid(h, w, config.backbone.patch_size)
    plans = []
    for i in indices:
        mc = MaskConfig(config.mask.ratio, config.mask.fg_delta, derive_seed(config.seed, epoch, int(i)))
        plans.append(make_mask_plan(grid, data.annotations[i], mc))
    idx = torch.as_tensor(np.asarray(indices, dtype=np.int64))
    m = cache.corpus_embeds.shape[0]
    if m > config.corpus_sample:
        rng = np.random.default_rng(derive_seed(config.seed, 0xC5, step))
        pick = torch.as_tensor(np.sort(rng.choice(m, size=config.corpus_sample, replace=False)))
        corpus = cache.corpus_embeds[pick]
    else:
        corpus = cache.corpus_embeds
    return Batch(
        images=torch.as_tensor(data.images[indices], dtype=dtype),
        contours=torch.as_tensor(data.contours[indices], dtype=dtype),
        masks=masks_from_plans(plans),
        teacher_image=cache.image_embeds[idx],
        prompt_embeds=cache.prompt_embeds[idx],
        has_pair=cache.has_pair[idx],
        corpus=corpus,
        strategies=Counter(p.strategy.value for p in plans),
        unresolved_pairs=sum(len(p.unresolved) for p in plans),
    )


@dataclass
class TrainState:
    model: MaskedAutoencoder
    optimizer: torch.optim.Optimizer
    scheduler: torch.optim.lr_scheduler.LambdaLR
    epoch: int = 0  # completed epochs
    step: int = 0  # completed optimizer steps


def steps_per_epoch(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


def build_state(config: TrainConfig, total_steps: int) -> TrainState:
    model = MaskedAutoencoder(config.backbone, seed=config.seed)
    optimizer = torch.optim.AdamW(
        model.learnable_parameters(), lr=config.lr, weight_decay=config.weight_decay, betas=tuple(config.betas)
    )
    warmup = max(1, math.ceil(config.warmup_fraction * total_steps)) if config.warmup_fraction > 0 else 0

    def factor(step):
        return 1.0 if warmup == 0 else min(1.0, (step + 1) / warmup)

    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, factor)
    return TrainState(model, optimizer, scheduler)


def train_step(state: TrainState, batch: Batch, config: TrainConfig) -> L.LossBundle:
    state.model.train()
    components = compute_losses(state.model, batch, config.tau)
    try:
        total = L.weighted_total(components, config.weights)
    except NonFinite as exc:
        exc.components = {k: float(v.detach()) for k, v in components.items()}
        raise
    state.optimizer.zero_grad(set_to_none=False)
    total.backward()
    state.optimizer.step()
    state.scheduler.step()
    state.step += 1
    return L.LossBundle(total=float(total.detach()), **{k: float(v.detach()) for k, v in components.items()})


# -- checkpoints ----------------------------------------------------------------


def checkpoint_payload(state: TrainState, config: TrainConfig) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "config": config.to_dict(),
        "model": state.model.state_dict(),
        "optimizer": state.optimizer.state_dict(),
        "scheduler": state.scheduler.state_dict(),
        "epoch": state.epoch,
        "step": state.step,
        "rng": {"seed": config.seed, "torch": torch.get_rng_state()},
    }


def save_checkpoint(path, payload: dict) -> None:
    # serialised via a buffer: torch names the archive after the target file,
    # which would make the bytes depend on the path
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(checkpoint_bytes(payload))
    os.replace(tmp, path)


def load_checkpoint(path) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"{path} is not a {CHECKPOINT_FORMAT} archive")
    return payload


def restore_state(payload: dict, total_steps: int) -> Tuple[TrainState, TrainConfig]:
    config = TrainConfig.from_dict(payload["config"])
    state = build_state(config, total_steps)
    state.model.load_state_dict(payload["model"])
    state.optimizer.load_state_dict(payload["optimizer"])
    state.scheduler.load_state_dict(payload["scheduler"])
    state.epoch = int(payload["epoch"])
    state.step = int(payload["step"])
    torch.set_rng_state(payload["rng"]["torch"])
    return state, config


# -- metrics --------------------------------------------------------------------


class MetricsWriter:
    """Append-only JSONL stream with a ``# config:`` header line."""

    def __init__(self, path, config: TrainConfig, resume_step: Optional[int] = None):
        self.path = Path(path)
        rows = []
        if resume_step is not None and self.path.is_file():
            rows = [r for r in read_metrics(self.path) if r["step"] < resume_step]
        with open(self.path, "w", encoding="utf-8") as fh:
            fh.write("# config: " + config.to_json() + "\n")
            for r in rows:
                fh.write(json.dumps(r, sort_keys=True) + "\n")

    def write(self, row: dict) -> None:
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_metrics(path) -> List[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            rows.append(json.loads(line))
    return rows


# -- loop -----------------------------------------------------------------------


@dataclass
class TrainResult:
    state: TrainState
    config: TrainConfig
    metrics: List[dict]
    checkpoint: Optional[Path] = None


def train(
    config: TrainConfig,
    data: PretrainData,
    out_dir=None,
    resume=None,
    teacher: Optional[Teacher] = None,
    stop_after_epochs: Optional[int] = None,
) -> TrainResult:
    """Run the epoch loop, checkpointing after each epoch when ``out_dir`` is set.

    ``resume`` is a checkpoint path; its config replaces ``config``.
    ``stop_after_epochs`` ends the run early without changing the schedule.
    """
    if len(data) == 0:
        raise ValidationError("no training samples")
    spe = steps_per_epoch(len(data), config.batch_size)
    if resume is not None:
        payload = load_checkpoint(resume)
        epochs = int(payload["config"]["epochs"])
        state, config = restore_state(payload, spe * epochs)
    else:
        state = build_state(config, spe * config.epochs)
    teacher = teacher or load_teacher(config.teacher, config.teacher_seed)
    cache = TeacherCache.build(teacher, data)

    out = Path(out_dir) if out_dir is not None else None
    writer = None
    ckpt_path = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        writer = MetricsWriter(out / METRICS_NAME, config, resume_step=state.step if resume else None)
        ckpt_path = out / CHECKPOINT_NAME
        if state.epoch == 0 and state.step == 0:
            save_checkpoint(ckpt_path, checkpoint_payload(state, config))

    metrics = []
    start = time.perf_counter()
    last_epoch = config.epochs if stop_after_epochs is None else min(config.epochs, stop_after_epochs)
    for epoch in range(state.epoch, last_epoch):
        order = np.random.default_rng(derive_seed(config.seed, 0xE0, epoch)).permutation(len(data))
        for b in range(spe):
            indices = order[b * config.batch_size : (b + 1) * config.batch_size]
            batch = make_batch(data, cache, indices, config, epoch, state.step)
            lr = state.optimizer.param_groups[0]["lr"]
            try:
                bundle = train_step(state, batch, config)
            except NonFinite as exc:
                exc.checkpoint = str(ckpt_path) if ckpt_path else None
                logger.error("non-finite loss at step %d: %s (last good: %s)", state.step, exc.components, ckpt_path)
                raise
            row = {
                "step": state.step - 1,
                "epoch": epoch,
                **bundle.as_dict(),
                "masked_count": int(batch.masks.sum()),
                "strategies": dict(sorted(batch.strategies.items())),
                "unresolved_pairs": batch.unresolved_pairs,
                "lr": lr,
                "wall_clock": round(time.perf_counter() - start, 6),
            }
            metrics.append(row)
            if writer:
                writer.write(row)
        state.epoch = epoch + 1
        if out is not None:
            payload = checkpoint_payload(state, config)
            save_checkpoint(ckpt_path, payload)
            if config.keep_all_checkpoints:
                save_checkpoint(out / f"checkpoint_epoch{state.epoch:04d}.pt", payload)
    return TrainResult(state, config, metrics, ckpt_path)


def _canonical(obj):
    # pickle memoises by object identity; interning every string makes the
    # byte stream independent of where equal strings came from
    if isinstance(obj, str):
        return sys.intern(obj)
    if isinstance(obj, dict):
        return {_canonical(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return type(obj)(_canonical(v) for v in obj)
    return obj


def checkpoint_bytes(payload: dict) -> bytes:
    buf = io.BytesIO()
    torch.save(_canonical(payload), buf)
    return buf.getvalue()
