import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from vehiclemae.geometry import Annotation, build_patch_grid  # noqa: E402


@pytest.fixture
def grid():
    return build_patch_grid(224, 224, 16)


@pytest.fixture
def tiny_grid():
    return build_patch_grid(64, 64, 16)


def random_annotation(rng, size=224, min_side=24.0):
    """Box fully inside the image with a uniform angle."""
    x0 = rng.uniform(0, size - min_side)
    y0 = rng.uniform(0, size - min_side)
    x1 = rng.uniform(x0 + min_side, size)
    y1 = rng.uniform(y0 + min_side, size)
    return Annotation((x0, y0, x1, y1), float(rng.uniform(0, 360)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
