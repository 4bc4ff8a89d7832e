"""Minimal deterministic SVG scatter plots.

Hand-written markup with fixed-precision coordinates: the same data always
produces byte-identical files, which plotting libraries do not guarantee.
"""

import os

import numpy as np

from .errors import ConfigError

PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
    "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939",
    "#8c6d31", "#843c39", "#7b4173", "#3182bd",
)

PANEL = 360
MARGIN = 40
RADIUS = 2.0


def _scaled(points, size):
    points = np.asarray(points, dtype=np.float64)
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    unit = (points - lo) / span
    xs = MARGIN + unit[:, 0] * (size - 2 * MARGIN)
    ys = size - MARGIN - unit[:, 1] * (size - 2 * MARGIN)
    return xs, ys


def scatter_panels(panels, path):
    """Write side-by-side scatter panels.

    Each panel is (points(n,2), colors(n,) integer indices or None, title).
    Colors index a fixed 16-color palette modulo its length.
    """
    if not panels:
        raise ConfigError("svg: no panels to draw")
    width = PANEL * len(panels)
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{PANEL}" viewBox="0 0 {width} {PANEL}">',
        f'<rect width="{width}" height="{PANEL}" fill="white"/>',
    ]
    for idx, (points, colors, title) in enumerate(panels):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 2:
            raise ConfigError(
                f"svg: panel {idx} points must be (n, 2), got {points.shape}")
        x0 = idx * PANEL
        xs, ys = _scaled(points, PANEL)
        lines.append(
            f'<text x="{x0 + PANEL // 2}" y="20" text-anchor="middle" '
            f'font-family="monospace" font-size="13">{title}</text>')
        for i in range(len(points)):
            fill = (PALETTE[int(colors[i]) % len(PALETTE)]
                    if colors is not None else PALETTE[0])
            lines.append(
                f'<circle cx="{x0 + xs[i]:.2f}" cy="{ys[i]:.2f}" '
                f'r="{RADIUS}" fill="{fill}" fill-opacity="0.7"/>')
    lines.append("</svg>")
    data = "\n".join(lines) + "\n"
    path = os.fspath(path)
    with open(path, "w", newline="\n") as fh:
        fh.write(data)
    return path
