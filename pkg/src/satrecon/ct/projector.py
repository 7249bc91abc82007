"""Ray-driven fan-beam projector with exact ray/pixel intersection lengths.

The system matrix is assembled once per (geometry, grid) as a CSR matrix, so
forward projection is ``A @ x`` and back projection is ``A.T @ y``; the two
are adjoint by construction.
"""
from __future__ import annotations

from functools import lru_cache

import numba
import numpy as np
import scipy.sparse as sp

from .geometry import FanBeamGeometry, ImageGrid, Sinogram

__all__ = ["system_matrix", "forward_project", "back_project", "Projector"]


@numba.njit(cache=True)
def _ray_segments(sx, sy, dx, dy, x0, y0, ps, nx, ny, alphas):
    """Sorted plane-crossing parameters of one ray inside the grid box.

    Writes into ``alphas`` and returns the count.
    """
    ex = dx - sx
    ey = dy - sy
    amin = 0.0
    amax = 1.0
    x1 = x0 + nx * ps
    y1 = y0 + ny * ps
    if ex != 0.0:
        a0 = (x0 - sx) / ex
        a1 = (x1 - sx) / ex
        lo = min(a0, a1)
        hi = max(a0, a1)
        amin = max(amin, lo)
        amax = min(amax, hi)
    elif sx <= x0 or sx >= x1:
        return 0
    if ey != 0.0:
        a0 = (y0 - sy) / ey
        a1 = (y1 - sy) / ey
        lo = min(a0, a1)
        hi = max(a0, a1)
        amin = max(amin, lo)
        amax = min(amax, hi)
    elif sy <= y0 or sy >= y1:
        return 0
    if amax <= amin:
        return 0
    k = 0
    alphas[k] = amin
    k += 1
    if ex != 0.0:
        for i in range(nx + 1):
            a = (x0 + i * ps - sx) / ex
            if amin < a < amax:
                alphas[k] = a
                k += 1
    if ey != 0.0:
        for j in range(ny + 1):
            a = (y0 + j * ps - sy) / ey
            if amin < a < amax:
                alphas[k] = a
                k += 1
    alphas[k] = amax
    k += 1
    alphas[:k].sort()
    return k


@numba.njit(cache=True)
def _count(src, det, x0, y0, ps, nx, ny):
    nray = src.shape[0]
    counts = np.zeros(nray, dtype=np.int64)
    alphas = np.empty(nx + ny + 4)
    for r in range(nray):
        k = _ray_segments(src[r, 0], src[r, 1], det[r, 0], det[r, 1], x0, y0, ps, nx, ny, alphas)
        c = 0
        for i in range(k - 1):
            if alphas[i + 1] > alphas[i]:
                c += 1
        counts[r] = c
    return counts


@numba.njit(cache=True)
def _fill(src, det, x0, y0, ps, nx, ny, indptr, indices, data):
    nray = src.shape[0]
    alphas = np.empty(nx + ny + 4)
    for r in range(nray):
        sx, sy, dx, dy = src[r, 0], src[r, 1], det[r, 0], det[r, 1]
        k = _ray_segments(sx, sy, dx, dy, x0, y0, ps, nx, ny, alphas)
        length = np.sqrt((dx - sx) ** 2 + (dy - sy) ** 2)
        pos = indptr[r]
        for i in range(k - 1):
            a0 = alphas[i]
            a1 = alphas[i + 1]
            if a1 <= a0:
                continue
            am = 0.5 * (a0 + a1)
            ix = int(np.floor((sx + am * (dx - sx) - x0) / ps))
            iy = int(np.floor((sy + am * (dy - sy) - y0) / ps))
            ix = min(max(ix, 0), nx - 1)
            iy = min(max(iy, 0), ny - 1)
            indices[pos] = iy * nx + ix
            data[pos] = (a1 - a0) * length
            pos += 1


def _check_source_outside(geom: FanBeamGeometry, grid: ImageGrid):
    hx, hy = grid.half_extent
    if geom.source_to_isocenter <= np.hypot(hx, hy):
        raise ValueError("degenerate geometry: the source trajectory enters the image grid")


@lru_cache(maxsize=8)
def system_matrix(geom: FanBeamGeometry, grid: ImageGrid) -> sp.csr_matrix:
    """CSR matrix with one row per (view, bin) ray and one column per pixel."""
    _check_source_outside(geom, grid)
    src, det = geom.ray_endpoints()
    src = np.ascontiguousarray(src.reshape(-1, 2))
    det = np.ascontiguousarray(det.reshape(-1, 2))
    hx, hy = grid.half_extent
    args = (-hx, -hy, float(grid.pixel_size), grid.nx, grid.ny)
    counts = _count(src, det, *args)
    indptr = np.zeros(counts.size + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    indices = np.empty(indptr[-1], dtype=np.int64)
    data = np.empty(indptr[-1])
    _fill(src, det, *args, indptr, indices, data)
    A = sp.csr_matrix((data, indices, indptr), shape=(counts.size, grid.size))
    A.sum_duplicates()
    return A


class Projector:
    """Forward/back projection pair for one geometry and grid.

    Keeps the transpose in CSR form so both directions are row-major sparse
    products.
    """

    def __init__(self, geom: FanBeamGeometry, grid: ImageGrid):
        self.geom = geom
        self.grid = grid
        self.A = system_matrix(geom, grid)
        self._At = None

    @property
    def At(self):
        if self._At is None:
            self._At = self.A.T.tocsr()
        return self._At

    @property
    def shape(self):
        return self.A.shape

    @property
    def T(self):
        return _Adjoint(self)

    def __matmul__(self, x):
        return self.A @ x

    def forward(self, img) -> np.ndarray:
        return (self.A @ np.asarray(img, dtype=float).ravel()).reshape(self.geom.shape)

    def back(self, sino) -> np.ndarray:
        return (self.At @ np.asarray(sino, dtype=float).ravel()).reshape(self.grid.shape)

    def view_blocks(self):
        """Row slices of ``A`` per view (CSR) and their transposes."""
        nb = self.geom.n_bins
        blocks = [self.A[v * nb:(v + 1) * nb] for v in range(self.geom.n_views)]
        return blocks, [b.T.tocsr() for b in blocks]


class _Adjoint:
    def __init__(self, proj: Projector):
        self.proj = proj
        self.shape = proj.shape[::-1]

    def __matmul__(self, y):
        return self.proj.At @ y


@lru_cache(maxsize=8)
def _projector(geom: FanBeamGeometry, grid: ImageGrid) -> Projector:
    return Projector(geom, grid)


def forward_project(img, geom: FanBeamGeometry, grid: ImageGrid | None = None) -> Sinogram:
    img = np.asarray(img, dtype=float)
    if grid is None:
        raise ValueError("an ImageGrid is needed to place the image")
    if img.shape != grid.shape:
        raise ValueError(f"image shape {img.shape} does not match grid {grid.shape}")
    return Sinogram(_projector(geom, grid).forward(img))


def back_project(sino, geom: FanBeamGeometry, grid: ImageGrid) -> np.ndarray:
    vals = sino.values if isinstance(sino, Sinogram) else np.asarray(sino, dtype=float)
    if vals.shape != geom.shape:
        raise ValueError(f"sinogram shape {vals.shape} does not match geometry {geom.shape}")
    return _projector(geom, grid).back(vals)
