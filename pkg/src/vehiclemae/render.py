"""Mask-plan overlays and loss-curve plots."""
from __future__ import annotations

from pathlib import Path
from typing import List, Sequence

import numpy as np
from PIL import Image, ImageDraw

from .geometry import Annotation, PatchGrid, symmetry_axis
from .losses import COMPONENTS


def render_plan_overlay(image: np.ndarray, grid: PatchGrid, plan, annotation: Annotation, scale: int = 4) -> Image.Image:
    """Masked patches greyed out, box in blue, symmetry axis in red, swapped-in patches in yellow."""
    base = np.clip(np.rint(np.asarray(image) * 255), 0, 255).astype(np.uint8)
    ps = grid.patch_size
    shaded = base.copy()
    for idx in plan.masked_indices:
        r, c = divmod(int(idx), grid.cols)
        cell = shaded[r * ps : (r + 1) * ps, c * ps : (c + 1) * ps]
        cell[:] = (0.35 * cell + 0.65 * 128).astype(np.uint8)
    im = Image.fromarray(shaded).resize((grid.image_width * scale, grid.image_height * scale), Image.NEAREST)
    draw = ImageDraw.Draw(im)
    for r in range(1, grid.rows):
        draw.line([(0, r * ps * scale), (im.width, r * ps * scale)], fill=(255, 255, 255), width=1)
    for c in range(1, grid.cols):
        draw.line([(c * ps * scale, 0), (c * ps * scale, im.height)], fill=(255, 255, 255), width=1)
    for masked_idx, _ in plan.swaps:
        r, c = divmod(int(masked_idx), grid.cols)
        draw.rectangle(
            [c * ps * scale, r * ps * scale, (c + 1) * ps * scale - 1, (r + 1) * ps * scale - 1],
            outline=(255, 220, 0),
            width=2,
        )
    if annotation.box is not None:
        draw.rectangle([v * scale for v in annotation.box], outline=(40, 90, 255), width=2)
    if annotation.angle is not None:
        axis = symmetry_axis(annotation.box, annotation.angle)
        (px, py), (dx, dy) = axis.point, axis.direction
        reach = max(grid.image_width, grid.image_height)
        draw.line(
            [((px - reach * dx) * scale, (py - reach * dy) * scale), ((px + reach * dx) * scale, (py + reach * dy) * scale)],
            fill=(230, 30, 30),
            width=2,
        )
    return im


def plot_metrics(rows: Sequence[dict], out_dir) -> List[Path]:
    """One PNG per loss component plus the weighted total."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    steps = [r["step"] for r in rows]
    paths = []
    for name in COMPONENTS + ("total",):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.plot(steps, [r[name] for r in rows], lw=1.2)
        ax.set_xlabel("step")
        ax.set_ylabel(name)
        ax.set_title(name)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        path = out / f"{name}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        paths.append(path)
    return paths
