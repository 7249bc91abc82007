"""Fan-beam filtered back projection for an equally spaced flat detector."""
from __future__ import annotations

import numba
import numpy as np

from .geometry import FanBeamGeometry, ImageGrid, Sinogram

__all__ = ["ramp_kernel", "filter_projections", "fbp"]


def ramp_kernel(n: int, spacing: float) -> np.ndarray:
    """Band-limited ramp kernel sampled at ``spacing`` on ``[-n+1, n-1]``."""
    k = np.arange(-(n - 1), n)
    h = np.zeros(k.size)
    h[k == 0] = 1.0 / (4.0 * spacing**2)
    odd = k % 2 == 1
    h[odd] = -1.0 / (np.pi * k[odd] * spacing) ** 2
    return h


def filter_projections(proj, spacing: float, window: str = "ramp") -> np.ndarray:
    """Convolve every row with half the ramp kernel, in the frequency domain.

    ``window="hann"`` apodizes the ramp with a raised cosine.
    """
    proj = np.atleast_2d(np.asarray(proj, dtype=float))
    nb = proj.shape[1]
    h = 0.5 * ramp_kernel(nb, spacing) * spacing
    nfft = 1 << int(np.ceil(np.log2(2 * nb - 1 + nb)))
    kern = np.zeros(nfft)
    kern[: nb] = h[nb - 1:]
    kern[-(nb - 1):] = h[: nb - 1]
    H = np.fft.rfft(kern)
    if window == "hann":
        f = np.fft.rfftfreq(nfft)
        H = H * 0.5 * (1.0 + np.cos(2.0 * np.pi * f))
    elif window != "ramp":
        raise ValueError(f"unknown window {window!r}")
    P = np.fft.rfft(proj, n=nfft, axis=1)
    return np.fft.irfft(P * H, n=nfft, axis=1)[:, :nb]


@numba.njit(cache=True)
def _backproject(filt, angles, D, du_iso, X, Y, dbeta):
    nv, nb = filt.shape
    ny, nx = X.shape
    img = np.zeros((ny, nx))
    c0 = 0.5 * (nb - 1)
    for v in range(nv):
        cb = np.cos(angles[v])
        sb = np.sin(angles[v])
        for iy in range(ny):
            for ix in range(nx):
                x = X[iy, ix]
                y = Y[iy, ix]
                dist = D - (x * cb + y * sb)
                U = dist / D
                s = D * (-x * sb + y * cb) / dist
                t = s / du_iso + c0
                i0 = int(np.floor(t))
                if i0 < 0 or i0 >= nb - 1:
                    continue
                w = t - i0
                val = (1.0 - w) * filt[v, i0] + w * filt[v, i0 + 1]
                img[iy, ix] += val / (U * U)
    return img * dbeta


def fbp(sino, geom: FanBeamGeometry, grid: ImageGrid, window: str = "ramp") -> np.ndarray:
    """Full-scan fan-beam FBP; returns an image in the sinogram's attenuation units."""
    vals = sino.values if isinstance(sino, Sinogram) else np.asarray(sino, dtype=float)
    if vals.shape != geom.shape:
        raise ValueError("sinogram does not match the geometry")
    D = geom.source_to_isocenter
    mag = geom.source_to_detector / D
    du_iso = geom.detector_pixel / mag
    s = geom.bin_positions() / mag
    weighted = vals * (D / np.sqrt(D * D + s * s))[None, :]
    filt = filter_projections(weighted, du_iso, window)
    X, Y = grid.centers()
    dbeta = np.deg2rad(geom.angular_step)
    # each line is measured twice over a full turn
    scale = 1.0 if geom.scan_range >= 359.999 else 2.0
    return _backproject(filt, geom.angles(), D, du_iso, X, Y, dbeta) * scale
