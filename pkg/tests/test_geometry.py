import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_pairs
from conftest import random_annotation
from vehiclemae.exceptions import IndexOutOfRange, NonDivisibleDimensions, ValidationError
from vehiclemae.geometry import (
    Annotation,
    AnnotationKind,
    AxisLine,
    build_patch_grid,
    compute_symmetry_pairs,
    patch_center,
    patches_in_box,
    reflect_point,
    reflect_points,
    symmetry_axis,
)


@pytest.mark.parametrize(
    "h, w, p, rows, cols, n",
    [(224, 224, 16, 14, 14, 196), (16, 16, 16, 1, 1, 1), (224, 112, 16, 14, 7, 98)],
)
def test_build_patch_grid(h, w, p, rows, cols, n):
    g = build_patch_grid(h, w, p)
    assert (g.rows, g.cols, g.num_patches) == (rows, cols, n)


@pytest.mark.parametrize("h, w, p", [(225, 224, 16), (224, 200, 16), (0, 16, 16)])
def test_build_patch_grid_rejects_remainders(h, w, p):
    with pytest.raises(NonDivisibleDimensions):
        build_patch_grid(h, w, p)


@pytest.mark.parametrize("index, center", [(0, (8.0, 8.0)), (13, (216.0, 8.0)), (195, (216.0, 216.0))])
def test_patch_center(grid, index, center):
    assert patch_center(grid, index) == center


@pytest.mark.parametrize("index", [-1, 196])
def test_patch_center_out_of_range(grid, index):
    with pytest.raises(IndexOutOfRange):
        patch_center(grid, index)


def test_patches_in_box(grid):
    assert patches_in_box(grid, (0, 0, 224, 224)).tolist() == list(range(196))
    # 5x5 box between centers (8, 8) and (24, 24) holds none of them
    assert patches_in_box(grid, (10, 10, 15, 15)).size == 0
    left = patches_in_box(grid, (0, 0, 112, 224))
    assert left.size == 98
    assert set((left % 14).tolist()) == set(range(7))


def test_annotation_kinds():
    assert Annotation().kind is AnnotationKind.NONE
    assert Annotation((0, 0, 10, 10)).kind is AnnotationKind.BOX_ONLY
    assert Annotation((0, 0, 10, 10), 30).kind is AnnotationKind.BOX_AND_ANGLE
    with pytest.raises(ValidationError):
        Annotation(None, 30)
    with pytest.raises(ValidationError):
        Annotation((5, 0, 5, 10))
    with pytest.raises(ValidationError):
        Annotation((0, 0, 10, 10), 360.0)
    with pytest.raises(ValidationError):
        Annotation((0, 0, 300, 10)).check_within(224, 224)


def test_symmetry_axis():
    ax = symmetry_axis((0, 0, 224, 224), 90)
    assert ax.point == (112.0, 112.0)
    assert ax.direction == (0.0, 1.0)
    assert symmetry_axis((0, 0, 10, 10), 0).direction == (1.0, 0.0)
    d = symmetry_axis((0, 0, 10, 10), 45).direction
    assert d == pytest.approx((math.sqrt(2) / 2, math.sqrt(2) / 2), abs=1e-15)


@given(st.floats(0, 360, exclude_max=True))
def test_axis_direction_is_unit(angle):
    dx, dy = symmetry_axis((0, 0, 1, 1), angle).direction
    assert abs(math.hypot(dx, dy) - 1.0) <= 1e-12


def test_reflect_point_examples():
    vertical = AxisLine((112.0, 112.0), (0.0, 1.0))
    assert reflect_point(vertical, (8, 8)) == (216.0, 8.0)
    assert reflect_point(vertical, (112, 40)) == (112.0, 40.0)
    diag = AxisLine((0.0, 0.0), (math.sqrt(0.5), math.sqrt(0.5)))
    assert reflect_point(diag, (1, 0)) == pytest.approx((0.0, 1.0), abs=1e-12)


def test_reflection_is_an_involution():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        theta = rng.uniform(0, 2 * np.pi)
        axis = AxisLine(tuple(rng.uniform(-500, 500, 2)), (math.cos(theta), math.sin(theta)))
        p = rng.uniform(-500, 500, 2)
        back = reflect_points(axis, reflect_points(axis, p))
        assert np.max(np.abs(back - p)) <= 1e-9


def test_full_box_vertical_axis_is_column_mirror(grid):
    pairing = compute_symmetry_pairs(grid, (0, 0, 224, 224), 90)
    expected = sorted((r * 14 + c, r * 14 + 13 - c) for r in range(14) for c in range(7))
    assert list(pairing.pairs) == expected
    assert len(pairing.pairs) == 98 and pairing.unpaired == ()


def test_single_column_box_has_no_pairs(grid):
    # the box holds only column 3 (centers at x = 56); the axis runs through it
    pairing = compute_symmetry_pairs(grid, (50, 0, 62, 224), 90)
    assert pairing.pairs == ()
    assert len(pairing.unpaired) == 14


def test_full_box_diagonal_matches_brute_force(grid):
    pairs, unpaired = brute_force_pairs(14, 14, 16, (0, 0, 224, 224), 45)
    pairing = compute_symmetry_pairs(grid, (0, 0, 224, 224), 45)
    assert list(pairing.pairs) == pairs
    assert list(pairing.unpaired) == unpaired
    # transpose pairs plus the 14 on-diagonal patches; frozen from the oracle
    assert (len(pairs), len(unpaired)) == (91, 14)


def test_pairing_properties(grid):
    rng = np.random.default_rng(3)
    for _ in range(200):
        ann = random_annotation(rng)
        pairing = compute_symmetry_pairs(grid, ann.box, ann.angle)
        fg = set(patches_in_box(grid, ann.box).tolist())
        flat = [k for p in pairing.pairs for k in p]
        assert len(flat) == len(set(flat))
        assert set(flat) | set(pairing.unpaired) == fg
        assert not set(flat) & set(pairing.unpaired)
        axis = symmetry_axis(ann.box, ann.angle)
        for i, j in pairing.pairs:
            rx, ry = reflect_point(axis, patch_center(grid, j))
            cx, cy = patch_center(grid, i)
            assert max(abs(rx - cx), abs(ry - cy)) <= 8 + 1e-6
        flipped = compute_symmetry_pairs(grid, ann.box, (ann.angle + 180) % 360)
        assert flipped == pairing


@settings(max_examples=50, deadline=None)
@given(
    x0=st.integers(0, 150),
    y0=st.integers(0, 150),
    w=st.integers(20, 74),
    h=st.integers(20, 74),
)
def test_vertical_axis_closed_form(x0, y0, w, h):
    """Boxes centred on a grid line (even column count) mirror columns exactly."""
    grid = build_patch_grid(224, 224, 16)
    center_col_line = round((x0 + w / 2) / 16) * 16
    half = min(center_col_line, 224 - center_col_line, w // 2)
    if half < 16:
        return
    box = (center_col_line - half, y0, center_col_line + half, y0 + h)
    pairing = compute_symmetry_pairs(grid, box, 90)
    fg = patches_in_box(grid, box)
    axis_col = center_col_line / 16
    expected = set()
    for i in fg.tolist():
        r, c = divmod(i, 14)
        j = r * 14 + int(2 * axis_col - 1 - c)
        if i < j:
            expected.add((i, j))
    assert set(pairing.pairs) == expected
