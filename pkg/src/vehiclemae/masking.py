"""Random, box-guided and symmetry-guided patch masking.

Every strategy masks exactly ``target_masked_count`` patches so that a batch of
plans always yields equally sized token sequences.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .exceptions import ValidationError
from .geometry import (
    Annotation,
    AnnotationKind,
    Box,
    PatchGrid,
    compute_symmetry_pairs,
    patches_in_box,
)

logger = logging.getLogger(__name__)

MASK_RATIO_ABLATION = (0.25, 0.50, 0.75, 0.85)


class MaskStrategy(enum.Enum):
    RANDOM = "RANDOM"
    BOX_GUIDED = "BOX_GUIDED"
    SYMMETRY_GUIDED = "SYMMETRY_GUIDED"


@dataclass(frozen=True)
class MaskConfig:
    ratio: float = 0.75
    fg_delta: float = 0.10
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.ratio <= 1.0:
            raise ValidationError(f"mask ratio {self.ratio} outside [0, 1]")
        if self.fg_delta < 0:
            raise ValidationError(f"fg_delta must be >= 0, got {self.fg_delta}")


@dataclass
class MaskPlan:
    masked: np.ndarray
    strategy: MaskStrategy
    seed: int
    swaps: List[Tuple[int, int]] = field(default_factory=list)
    # provenance of the repairs made along the way
    fallback: bool = False
    fg_masked: Optional[int] = None
    fg_adjusted: bool = False
    unresolved: List[Tuple[int, int]] = field(default_factory=list)

    @property
    def masked_count(self) -> int:
        return int(self.masked.sum())

    @property
    def masked_indices(self) -> np.ndarray:
        return np.flatnonzero(self.masked)

    @property
    def visible_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.masked)

    def to_record(self) -> dict:
        return {
            "strategy": self.strategy.value,
            "seed": int(self.seed),
            "masked": self.masked_indices.tolist(),
        }

    @classmethod
    def from_record(cls, record: dict, num_patches: int) -> "MaskPlan":
        masked = np.zeros(num_patches, dtype=bool)
        masked[np.asarray(record["masked"], dtype=np.int64)] = True
        return cls(masked=masked, strategy=MaskStrategy(record["strategy"]), seed=int(record["seed"]))


def target_masked_count(grid_or_total, ratio: float) -> int:
    """round(total * ratio) with halves rounded up."""
    total = grid_or_total.num_patches if isinstance(grid_or_total, PatchGrid) else int(grid_or_total)
    if not 0.0 <= ratio <= 1.0:
        raise ValidationError(f"mask ratio {ratio} outside [0, 1]")
    # the small slack absorbs binary representation error, e.g. 196 * 0.75
    return min(total, int(math.floor(total * ratio + 0.5 + 1e-9)))


def select_strategy(annotation: Optional[Annotation]) -> MaskStrategy:
    kind = AnnotationKind.NONE if annotation is None else annotation.kind
    return {
        AnnotationKind.NONE: MaskStrategy.RANDOM,
        AnnotationKind.BOX_ONLY: MaskStrategy.BOX_GUIDED,
        AnnotationKind.BOX_AND_ANGLE: MaskStrategy.SYMMETRY_GUIDED,
    }[kind]


def derive_seed(*keys: int) -> int:
    """Independent per-sample seed from (global_seed, sample_id, ...)."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, dtype=np.uint32)[0])


def _random_mask(grid: PatchGrid, config: MaskConfig, rng: np.random.Generator) -> np.ndarray:
    k = target_masked_count(grid, config.ratio)
    masked = np.zeros(grid.num_patches, dtype=bool)
    masked[rng.permutation(grid.num_patches)[:k]] = True
    return masked


def random_mask(grid: PatchGrid, config: MaskConfig) -> MaskPlan:
    rng = np.random.default_rng(config.rng_seed)
    return MaskPlan(_random_mask(grid, config, rng), MaskStrategy.RANDOM, config.rng_seed)


def _box_guided(grid: PatchGrid, box: Box, config: MaskConfig, rng: np.random.Generator, strategy):
    n = grid.num_patches
    fg = patches_in_box(grid, box)
    if fg.size == 0:
        logger.debug("box %s holds no patch center; falling back to random masking", box)
        return MaskPlan(_random_mask(grid, config, rng), strategy, config.rng_seed, fallback=True)

    k = target_masked_count(grid, config.ratio)
    is_fg = np.zeros(n, dtype=bool)
    is_fg[fg] = True
    bg = np.flatnonzero(~is_fg)

    fg_ratio = min(1.0, config.ratio + config.fg_delta)
    want = target_masked_count(fg.size, fg_ratio)
    # feasible foreground counts: background must absorb k - n_fg, and n_fg <= k
    n_fg = int(np.clip(want, max(0, k - bg.size), min(fg.size, k)))
    if n_fg != want:
        logger.debug("foreground budget %d infeasible, using %d", want, n_fg)

    masked = np.zeros(n, dtype=bool)
    masked[rng.permutation(fg)[:n_fg]] = True
    masked[rng.permutation(bg)[: k - n_fg]] = True
    return MaskPlan(masked, strategy, config.rng_seed, fg_masked=n_fg, fg_adjusted=n_fg != want)


def box_guided_mask(grid: PatchGrid, box: Box, config: MaskConfig) -> MaskPlan:
    rng = np.random.default_rng(config.rng_seed)
    return _box_guided(grid, box, config, rng, MaskStrategy.BOX_GUIDED)


def symmetry_guided_mask(grid: PatchGrid, annotation: Annotation, config: MaskConfig) -> MaskPlan:
    """Box-guided masking repaired so no symmetric pair stays fully visible.

    Pairs are visited in ascending order. For a fully visible pair one member
    is masked at random and a legal index from the replacement queue is
    unmasked, so the global count never changes. The queue holds masked
    background patches in random order, then masked foreground patches. An
    index is legal when unmasking it cannot expose a pair, i.e. it is unpaired
    or its partner is masked. When no legal index remains the pair is left
    unresolved and recorded in ``plan.unresolved``.
    """
    if annotation.kind is not AnnotationKind.BOX_AND_ANGLE:
        raise ValidationError(f"symmetry-guided masking needs box and angle, got {annotation.kind}")
    rng = np.random.default_rng(config.rng_seed)
    plan = _box_guided(grid, annotation.box, config, rng, MaskStrategy.SYMMETRY_GUIDED)
    pairing = compute_symmetry_pairs(grid, annotation.box, annotation.angle)
    if not pairing.pairs:
        return plan

    masked = plan.masked
    partner = np.full(grid.num_patches, -1, dtype=np.int64)
    for i, j in pairing.pairs:
        partner[i] = j
        partner[j] = i
    is_fg = np.zeros(grid.num_patches, dtype=bool)
    is_fg[patches_in_box(grid, annotation.box)] = True

    bg_queue = list(rng.permutation(np.flatnonzero(masked & ~is_fg)))
    fg_queue = None

    def legal(q):
        return masked[q] and (partner[q] < 0 or masked[partner[q]])

    def pop_legal():
        nonlocal fg_queue
        while bg_queue:
            q = int(bg_queue.pop())
            if legal(q):
                return q
        if fg_queue is None:
            fg_queue = list(rng.permutation(np.flatnonzero(masked & is_fg)))
        while fg_queue:
            q = int(fg_queue.pop())
            if legal(q):
                return q
        return None

    for i, j in pairing.pairs:
        if masked[i] or masked[j]:
            continue
        chosen = i if rng.random() < 0.5 else j
        masked[chosen] = True
        q = pop_legal()
        if q is None:
            masked[chosen] = False
            plan.unresolved.append((i, j))
            logger.warning("replacement queue exhausted; pair (%d, %d) left visible", i, j)
            continue
        masked[q] = False
        plan.swaps.append((chosen, q))
    return plan


def make_mask_plan(grid: PatchGrid, annotation: Optional[Annotation], config: MaskConfig) -> MaskPlan:
    """Dispatch on the annotation kind."""
    strategy = select_strategy(annotation)
    if strategy is MaskStrategy.RANDOM:
        return random_mask(grid, config)
    if strategy is MaskStrategy.BOX_GUIDED:
        return box_guided_mask(grid, annotation.box, config)
    return symmetry_guided_mask(grid, annotation, config)


@dataclass
class ValidationReport:
    passed: bool
    expected_count: int
    actual_count: int
    strategy_ok: bool
    visible_pairs: List[Tuple[int, int]] = field(default_factory=list)
    messages: List[str] = field(default_factory=list)


def validate_mask_plan(
    plan: MaskPlan, grid: PatchGrid, annotation: Optional[Annotation], config: MaskConfig
) -> ValidationReport:
    messages = []
    expected = target_masked_count(grid, config.ratio)
    actual = plan.masked_count
    if plan.masked.shape != (grid.num_patches,):
        messages.append(f"plan covers {plan.masked.shape[0]} patches, grid has {grid.num_patches}")
    if actual != expected:
        messages.append(f"masked count {actual} != expected {expected}")
    strategy_ok = plan.strategy is select_strategy(annotation)
    if not strategy_ok:
        messages.append(f"strategy {plan.strategy.value} inconsistent with annotation")
    visible_pairs = []
    if plan.strategy is MaskStrategy.SYMMETRY_GUIDED and annotation is not None and annotation.angle is not None:
        pairing = compute_symmetry_pairs(grid, annotation.box, annotation.angle)
        visible_pairs = [(i, j) for i, j in pairing.pairs if not (plan.masked[i] or plan.masked[j])]
        if visible_pairs:
            messages.append(f"{len(visible_pairs)} symmetric pair(s) fully visible: {visible_pairs}")
    return ValidationReport(
        passed=not messages,
        expected_count=expected,
        actual_count=actual,
        strategy_ok=strategy_ok,
        visible_pairs=visible_pairs,
        messages=messages,
    )
