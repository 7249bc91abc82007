"""Simultaneous algebraic reconstruction restricted to usable rays."""
from __future__ import annotations

import numpy as np

from .geometry import FanBeamGeometry, ImageGrid, Sinogram
from .projector import Projector, _projector

__all__ = ["view_order", "sart"]


def view_order(n_views: int) -> np.ndarray:
    """Deterministic view ordering that keeps consecutive views far apart."""
    step = max(1, int(round(n_views * (np.sqrt(5.0) - 1.0) / 2.0)))
    while np.gcd(step, n_views) != 1:
        step += 1
    return (np.arange(n_views) * step) % n_views


class _ViewBlocks:
    def __init__(self, proj: Projector):
        self.rows, self.cols = proj.view_blocks()
        self.row_sums = [np.asarray(b.sum(axis=1)).ravel() for b in self.rows]


_BLOCK_CACHE: dict = {}


def _blocks(proj: Projector) -> _ViewBlocks:
    key = (proj.geom, proj.grid)
    if key not in _BLOCK_CACHE:
        _BLOCK_CACHE.clear()
        _BLOCK_CACHE[key] = _ViewBlocks(proj)
    return _BLOCK_CACHE[key]


def sart(
    sino,
    geom: FanBeamGeometry,
    grid: ImageGrid,
    mask=None,
    iters: int = 30,
    relax: float = 0.5,
    x0=None,
    nonneg: bool = True,
) -> np.ndarray:
    """SART sweeps over all views using only rays where ``mask`` is true.

    Each view update is ``x += relax * A_v'(W_r (q_v - A_v x)) / c_v`` with
    ``W_r`` the inverse ray lengths and ``c_v`` the per-pixel sum of the
    usable rays' weights.  Views without usable rays are skipped.
    """
    if not 0.0 < relax < 2.0:
        raise ValueError("relaxation must lie in (0, 2)")
    vals = sino.values if isinstance(sino, Sinogram) else np.asarray(sino, dtype=float)
    if vals.shape != geom.shape:
        raise ValueError("sinogram does not match the geometry")
    mask = np.ones(geom.shape, bool) if mask is None else np.asarray(mask, dtype=bool).reshape(geom.shape)
    proj = _projector(geom, grid)
    blk = _blocks(proj)
    x = np.zeros(grid.size) if x0 is None else np.array(x0, dtype=float).ravel()
    order = view_order(geom.n_views)
    for _ in range(iters):
        for v in order:
            use = mask[v] & (blk.row_sums[v] > 0)
            if not use.any():
                continue
            A_v, At_v = blk.rows[v], blk.cols[v]
            w = np.where(use, 1.0 / np.where(use, blk.row_sums[v], 1.0), 0.0)
            col = At_v @ use.astype(float)
            res = (vals[v] - A_v @ x) * w
            upd = At_v @ res
            nz = col > 0
            x[nz] += relax * upd[nz] / col[nz]
        if nonneg:
            np.maximum(x, 0.0, out=x)
    return x.reshape(grid.shape)
