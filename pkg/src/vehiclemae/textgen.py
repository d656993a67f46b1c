"""Prompt generation from box/angle annotations, and the attribute corpus."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .exceptions import EmptyCorpus, FileUnreadable
from .geometry import Annotation, AnnotationKind, Box

POSITION_WORDS = (
    ("top-left", "top", "top-right"),
    ("left", "center", "right"),
    ("bottom-left", "bottom", "bottom-right"),
)
RATIO_WORDS = ("small", "medium", "large")
VIEW_WORDS = (
    "front",
    "front-right",
    "right side",
    "rear-right",
    "rear",
    "rear-left",
    "left side",
    "front-left",
)

Q1_TEMPLATE = "A photo of a vehicle at the {center} of the image, occupying a {ratio} portion of the frame."
Q2_TEMPLATE = (
    "A photo of a vehicle at the {center} of the image, occupying a {ratio} portion of the frame, "
    "viewed from the {angle}."
)


class PromptSource(enum.Enum):
    Q1 = "Q1"
    Q2 = "Q2"


@dataclass(frozen=True)
class PromptRecord:
    text: str
    source: PromptSource
    center_bucket: str
    ratio_bucket: str
    angle_bucket: Optional[str] = None


def _third(value: float, extent: float) -> int:
    # a value exactly on a cell boundary belongs to the lower cell
    if 3 * value <= extent:
        return 0
    if 3 * value <= 2 * extent:
        return 1
    return 2


def bucket_center(box: Box, image_dims: Tuple[int, int]) -> str:
    """Box center on a 3x3 grid; ``image_dims`` is (height, width)."""
    height, width = image_dims
    cx = (box[0] + box[2]) / 2.0
    cy = (box[1] + box[3]) / 2.0
    return POSITION_WORDS[_third(cy, height)][_third(cx, width)]


def bucket_ratio(box: Box, image_dims: Tuple[int, int]) -> str:
    height, width = image_dims
    r = (box[2] - box[0]) * (box[3] - box[1]) / float(height * width)
    if 3 * r < 1:
        return "small"
    if 3 * r < 2:
        return "medium"
    return "large"


def bucket_angle(angle: float) -> str:
    """45-degree sectors centered on 0 = front, clockwise through the right side."""
    return VIEW_WORDS[int(((float(angle) + 22.5) % 360.0) // 45.0)]


def generate_prompt(annotation: Optional[Annotation], image_dims: Tuple[int, int]) -> Optional[PromptRecord]:
    if annotation is None or annotation.kind is AnnotationKind.NONE:
        return None
    center = bucket_center(annotation.box, image_dims)
    ratio = bucket_ratio(annotation.box, image_dims)
    if annotation.kind is AnnotationKind.BOX_ONLY:
        text = Q1_TEMPLATE.format(center=center, ratio=ratio)
        return PromptRecord(text, PromptSource.Q1, center, ratio)
    view = bucket_angle(annotation.angle)
    text = Q2_TEMPLATE.format(center=center, ratio=ratio, angle=view)
    return PromptRecord(text, PromptSource.Q2, center, ratio, view)


@dataclass(frozen=True)
class AttributeCorpus:
    texts: Tuple[str, ...]

    def __len__(self):
        return len(self.texts)


def load_attribute_corpus(path) -> AttributeCorpus:
    """One description per line; blank lines dropped, duplicates removed in order."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise FileUnreadable(f"cannot read corpus {path}: {exc}") from exc
    texts = list(dict.fromkeys(line.strip() for line in lines if line.strip()))
    if not texts:
        raise EmptyCorpus(f"corpus {path} has no descriptions")
    return AttributeCorpus(tuple(texts))


_BRANDS = ("Aurel", "Borvik", "Castra", "Dunmore", "Elkar", "Fenwick", "Galen", "Hollis")
_COLORS = ("white", "black", "silver", "red", "blue", "grey", "green", "yellow")
_ENERGY = ("petrol", "diesel", "hybrid", "electric")
_LEVELS = ("compact", "mid-size", "full-size", "SUV", "MPV", "pickup")


def synth_attribute_corpus(n: int, seed: int = 0) -> List[str]:
    """Made-up vehicle-model descriptions covering the eleven attribute fields."""
    rng = np.random.default_rng([seed, 0xC0])
    out = []
    while len(out) < n:
        length = int(rng.integers(3800, 5200))
        width = int(rng.integers(1650, 2000))
        height = int(rng.integers(1350, 1950))
        text = (
            f"A {rng.choice(_COLORS)} {rng.choice(_BRANDS)} {rng.choice(_LEVELS)} vehicle "
            f"with {rng.choice(_ENERGY)} power, {length} mm long, {width} mm wide, {height} mm high, "
            f"{rng.choice([2, 4, 5])} doors, {rng.choice([2, 4, 5, 7])} seats, "
            f"a {int(rng.integers(2400, 3100))} mm wheelbase, made in {int(rng.integers(2005, 2025))}."
        )
        if text not in out:
            out.append(text)
    return out
