"""Analytic ellipse phantoms rendered by pixel-centre membership.

Attenuation values are in 1/mm; water is 0.02/mm.
"""
from __future__ import annotations

import numpy as np

from .geometry import ImageGrid

__all__ = ["MU_WATER", "Ellipse", "render_ellipses", "make_phantom", "SHEPP_LOGAN", "PHANTOM_KINDS"]

MU_WATER = 0.02

# (value, semi-axis a, semi-axis b, centre x, centre y, rotation in degrees),
# coordinates normalised to the half field of view; values are additive.
SHEPP_LOGAN = (
    (2.00, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.98, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.02, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    (-0.02, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.01, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.01, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.01, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.01, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.01, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.01, 0.0230, 0.0460, 0.06, -0.605, 0.0),
)

Ellipse = tuple


def render_ellipses(ellipses, grid: ImageGrid, scale: float = 1.0, mode: str = "add", extent=None) -> np.ndarray:
    """Rasterise ellipses onto ``grid``.

    ``extent`` (mm) maps normalised coordinates to physical ones and defaults
    to the grid half-width.  ``mode="set"`` paints later ellipses over
    earlier ones instead of summing.
    """
    X, Y = grid.centers()
    if extent is None:
        extent = min(grid.half_extent)
    img = np.zeros(grid.shape)
    for val, a, b, cx, cy, rot in ellipses:
        th = np.deg2rad(rot)
        dx = X / extent - cx
        dy = Y / extent - cy
        xr = dx * np.cos(th) + dy * np.sin(th)
        yr = -dx * np.sin(th) + dy * np.cos(th)
        inside = (xr / a) ** 2 + (yr / b) ** 2 <= 1.0
        if mode == "add":
            img[inside] += val * scale
        elif mode == "set":
            img[inside] = val * scale
        else:
            raise ValueError(f"unknown mode {mode!r}")
    return img


def _knee(grid: ImageGrid) -> np.ndarray:
    # two overlapping soft-tissue lobes, one bone in each, a small patella on the axis (mm)
    mu_bone = 2.0 * MU_WATER
    mu_marrow = 1.3 * MU_WATER
    shapes = (
        (MU_WATER, 50.0, 46.0, -28.0, 0.0, 0.0),
        (MU_WATER, 50.0, 46.0, 28.0, 0.0, 0.0),
        (mu_bone, 22.0, 17.0, -26.0, -2.0, 0.0),
        (mu_bone, 22.0, 17.0, 26.0, -2.0, 0.0),
        (mu_marrow, 15.0, 10.0, -26.0, -2.0, 0.0),
        (mu_marrow, 15.0, 10.0, 26.0, -2.0, 0.0),
        (1.6 * MU_WATER, 10.0, 6.0, 0.0, 30.0, 0.0),
    )
    return render_ellipses(shapes, grid, mode="set", extent=1.0)


def _head(grid: ImageGrid) -> np.ndarray:
    # Shepp-Logan interior scaled to soft tissue, wrapped in a denser skull ring
    half = 0.9 * min(grid.half_extent)
    inner = render_ellipses(SHEPP_LOGAN[1:], grid, scale=MU_WATER, extent=half)
    skull = render_ellipses(SHEPP_LOGAN[:1], grid, extent=half) > 0
    brain = render_ellipses(SHEPP_LOGAN[1:2], grid, extent=half) < 0
    img = np.where(skull, 2.5 * MU_WATER, 0.0)
    img[brain] = MU_WATER * 2.0 + inner[brain]
    return img


def _shepp(grid: ImageGrid) -> np.ndarray:
    return render_ellipses(SHEPP_LOGAN, grid, scale=MU_WATER)


PHANTOM_KINDS = {"knee": _knee, "head": _head, "shepp": _shepp, "empty": lambda g: g.zeros()}


def make_phantom(kind: str, grid: ImageGrid) -> np.ndarray:
    try:
        return PHANTOM_KINDS[kind](grid)
    except KeyError:
        raise ValueError(f"unknown phantom kind {kind!r}; choose from {sorted(PHANTOM_KINDS)}") from None
