"""Independent reference computations used to freeze expected values.

Nothing here imports the code under test; each routine takes a deliberately
different (slow, direct) route to the same quantity.
"""
import math

import numpy as np


def brute_force_pairs(rows, cols, patch, box, angle_deg):
    """Reflect every foreground center with a double-angle matrix and nearest-match."""
    x0, y0, x1, y1 = box
    fg = []
    for r in range(rows):
        for c in range(cols):
            cx, cy = (c + 0.5) * patch, (r + 0.5) * patch
            if x0 < cx < x1 and y0 < cy < y1:
                fg.append((r * cols + c, cx, cy))
    ox, oy = (x0 + x1) / 2, (y0 + y1) / 2
    two = math.radians(2 * angle_deg)
    c2, s2 = math.cos(two), math.sin(two)
    half = patch / 2
    partner = {}
    for i, cx, cy in fg:
        dx, dy = cx - ox, cy - oy
        rx, ry = ox + c2 * dx + s2 * dy, oy + s2 * dx - c2 * dy
        best = None
        for j, jx, jy in fg:
            if max(abs(rx - jx), abs(ry - jy)) <= half + 1e-6:
                key = (round((rx - jx) ** 2 + (ry - jy) ** 2, 6), j)
                best = key if best is None or key < best else best
        partner[i] = None if best is None else best[1]
    pairs = set()
    for i, j in partner.items():
        if j is not None and j != i and partner.get(j) == i:
            pairs.add((min(i, j), max(i, j)))
    paired = {k for p in pairs for k in p}
    unpaired = sorted(i for i, _, _ in fg if i not in paired)
    return sorted(pairs), unpaired


def softmax(z):
    z = [float(v) for v in z]
    m = max(z)
    e = [math.exp(v - m) for v in z]
    s = sum(e)
    return [v / s for v in e]


def cross_entropy(p, q, eps=1e-12):
    return -sum(pi * math.log(max(qi, eps)) for pi, qi in zip(p, q))


def entropy(p, eps=1e-12):
    return -sum(pi * math.log(max(pi, eps)) for pi in p)


def kl(p, q, eps=1e-12):
    return sum(pi * (math.log(max(pi, eps)) - math.log(max(qi, eps))) for pi, qi in zip(p, q))


def sobel_magnitude(gray):
    """Direct 3x3 correlation with edge replication, then max-normalisation."""
    gray = np.asarray(gray, dtype=np.float64)
    h, w = gray.shape
    kx = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]
    ky = [[-1, -2, -1], [0, 0, 0], [1, 2, 1]]
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            gx = gy = 0.0
            for dy in range(3):
                for dx in range(3):
                    yy = min(max(y + dy - 1, 0), h - 1)
                    xx = min(max(x + dx - 1, 0), w - 1)
                    gx += kx[dy][dx] * gray[yy, xx]
                    gy += ky[dy][dx] * gray[yy, xx]
            out[y, x] = math.sqrt(gx * gx + gy * gy)
    peak = out.max()
    return out / peak if peak > 0 else out
