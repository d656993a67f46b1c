"""Patch grids and the reflection geometry behind symmetric patch pairing.

Patch indices are row-major everywhere: index = row * cols + col.
Points are (x, y) in pixels with the origin at the top-left image corner.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .exceptions import IndexOutOfRange, NonDivisibleDimensions, ValidationError

Box = Tuple[float, float, float, float]
Point = Tuple[float, float]


@dataclass(frozen=True)
class PatchGrid:
    image_height: int
    image_width: int
    patch_size: int
    rows: int
    cols: int

    @property
    def num_patches(self) -> int:
        return self.rows * self.cols

    def centers(self) -> np.ndarray:
        """All patch centers as an array of shape (num_patches, 2)."""
        idx = np.arange(self.num_patches)
        return np.stack(
            [(idx % self.cols + 0.5) * self.patch_size, (idx // self.cols + 0.5) * self.patch_size],
            axis=1,
        )


def build_patch_grid(image_height: int, image_width: int, patch_size: int) -> PatchGrid:
    if patch_size <= 0 or image_height <= 0 or image_width <= 0:
        raise NonDivisibleDimensions(
            f"dimensions must be positive, got {image_height}x{image_width} / {patch_size}"
        )
    if image_height % patch_size or image_width % patch_size:
        raise NonDivisibleDimensions(
            f"patch size {patch_size} does not divide {image_height}x{image_width}"
        )
    return PatchGrid(
        image_height=image_height,
        image_width=image_width,
        patch_size=patch_size,
        rows=image_height // patch_size,
        cols=image_width // patch_size,
    )


def patch_center(grid: PatchGrid, index: int) -> Point:
    if not 0 <= index < grid.num_patches:
        raise IndexOutOfRange(f"patch index {index} outside [0, {grid.num_patches})")
    row, col = divmod(int(index), grid.cols)
    return ((col + 0.5) * grid.patch_size, (row + 0.5) * grid.patch_size)


class AnnotationKind(enum.Enum):
    NONE = "NONE"
    BOX_ONLY = "BOX_ONLY"
    BOX_AND_ANGLE = "BOX_AND_ANGLE"


@dataclass(frozen=True)
class Annotation:
    """Detector output for one image: optional box, optional yaw angle in degrees.

    An angle without a box is rejected; the kind is derived from what is present.
    """

    box: Optional[Box] = None
    angle: Optional[float] = None

    def __post_init__(self):
        if self.angle is not None and self.box is None:
            raise ValidationError("an angle annotation requires a box")
        if self.box is not None:
            box = tuple(float(v) for v in self.box)
            if len(box) != 4:
                raise ValidationError(f"box must have 4 coordinates, got {self.box!r}")
            if not (box[0] < box[2] and box[1] < box[3]):
                raise ValidationError(f"degenerate box {box}")
            object.__setattr__(self, "box", box)
        if self.angle is not None:
            angle = float(self.angle)
            if not (0.0 <= angle < 360.0) or not math.isfinite(angle):
                raise ValidationError(f"angle {angle} outside [0, 360)")
            object.__setattr__(self, "angle", angle)

    @property
    def kind(self) -> AnnotationKind:
        if self.box is None:
            return AnnotationKind.NONE
        if self.angle is None:
            return AnnotationKind.BOX_ONLY
        return AnnotationKind.BOX_AND_ANGLE

    def check_within(self, image_height: float, image_width: float) -> None:
        if self.box is None:
            return
        x0, y0, x1, y1 = self.box
        if x0 < 0 or y0 < 0 or x1 > image_width or y1 > image_height:
            raise ValidationError(
                f"box {self.box} exceeds image bounds {image_width}x{image_height}"
            )


@dataclass(frozen=True)
class AxisLine:
    point: Point
    direction: Point


@dataclass(frozen=True)
class SymmetryPairing:
    pairs: Tuple[Tuple[int, int], ...]
    unpaired: Tuple[int, ...]

    def partner_map(self) -> dict:
        out = {}
        for i, j in self.pairs:
            out[i] = j
            out[j] = i
        return out


def patches_in_box(grid: PatchGrid, box: Box) -> np.ndarray:
    """Sorted indices of patches whose center lies strictly inside ``box``."""
    x0, y0, x1, y1 = box
    c = grid.centers()
    inside = (c[:, 0] > x0) & (c[:, 0] < x1) & (c[:, 1] > y0) & (c[:, 1] < y1)
    return np.flatnonzero(inside)


_EXACT_DIRECTIONS = {0.0: (1.0, 0.0), 90.0: (0.0, 1.0), 180.0: (-1.0, 0.0), 270.0: (0.0, -1.0)}


def unit_direction(angle: float) -> Point:
    # multiples of 90 degrees are returned exactly so axis-aligned mirrors stay exact
    angle = float(angle) % 360.0
    if angle in _EXACT_DIRECTIONS:
        return _EXACT_DIRECTIONS[angle]
    theta = math.radians(angle)
    return (math.cos(theta), math.sin(theta))


def box_center(box: Box) -> Point:
    return ((box[0] + box[2]) / 2.0, (box[1] + box[3]) / 2.0)


def symmetry_axis(box: Box, angle: float) -> AxisLine:
    """Line through the box center along the yaw direction (cos a, sin a)."""
    return AxisLine(point=box_center(box), direction=unit_direction(angle))


def reflect_points(axis: AxisLine, points: np.ndarray) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    o = np.asarray(axis.point, dtype=np.float64)
    d = np.asarray(axis.direction, dtype=np.float64)
    v = p - o
    along = v @ d
    return o + 2.0 * along[..., None] * d - v


def reflect_point(axis: AxisLine, p: Point) -> Point:
    x, y = reflect_points(axis, np.asarray(p, dtype=np.float64))
    return (float(x), float(y))


# points within this distance of a cell edge count as on the edge; squared
# distances are compared after rounding at the same scale so that exact
# corner/edge ties resolve by index rather than by rounding noise
_MATCH_EPS = 1e-6
_DIST_DECIMALS = 6


def _match_cells(grid: PatchGrid, points: np.ndarray, allowed: np.ndarray) -> np.ndarray:
    """For each point, the allowed cell whose square contains it (or -1).

    Points on a shared cell edge go to the nearest center, exact ties to the
    lower index.
    """
    ps = grid.patch_size
    out = np.full(len(points), -1, dtype=np.int64)
    for n, (x, y) in enumerate(points):
        best = None
        cols = {math.floor((x - _MATCH_EPS) / ps), math.floor((x + _MATCH_EPS) / ps)}
        rows = {math.floor((y - _MATCH_EPS) / ps), math.floor((y + _MATCH_EPS) / ps)}
        for r in rows:
            for c in cols:
                if not (0 <= r < grid.rows and 0 <= c < grid.cols):
                    continue
                j = r * grid.cols + c
                if not allowed[j]:
                    continue
                cx, cy = (c + 0.5) * ps, (r + 0.5) * ps
                key = (round((x - cx) ** 2 + (y - cy) ** 2, _DIST_DECIMALS), j)
                if best is None or key < best:
                    best = key
        if best is not None:
            out[n] = best[1]
    return out


def compute_symmetry_pairs(grid: PatchGrid, box: Box, angle: float) -> SymmetryPairing:
    """Pair foreground patches that mirror each other across the vehicle axis.

    ``{i, j}`` is a pair when the reflection of each center lands in the other's
    cell. Foreground patches without such a mutual partner, including those that
    reflect into their own cell, are returned as unpaired.
    """
    fg = patches_in_box(grid, box)
    if fg.size == 0:
        return SymmetryPairing(pairs=(), unpaired=())
    # a line is undirected: theta and theta + 180 must give the same pairing
    axis = symmetry_axis(box, float(angle) % 180.0)
    allowed = np.zeros(grid.num_patches, dtype=bool)
    allowed[fg] = True
    reflected = reflect_points(axis, grid.centers()[fg])
    partner = dict(zip(fg.tolist(), _match_cells(grid, reflected, allowed).tolist()))
    pairs = []
    unpaired = []
    for i in fg.tolist():
        j = partner[i]
        if j >= 0 and j != i and partner.get(j) == i:
            if i < j:
                pairs.append((i, j))
        else:
            unpaired.append(i)
    return SymmetryPairing(pairs=tuple(pairs), unpaired=tuple(unpaired))
