"""Detector overexposure: readings below a per-view threshold are reported as zero."""
from __future__ import annotations

import numpy as np

from ..sensing import SaturatedObservations
from .geometry import Sinogram
from .phantoms import MU_WATER

__all__ = ["apply_overexposure", "kappa_from_fraction", "true_indicator", "add_projection_noise", "rmse_hu"]


def kappa_from_fraction(sino, frac: float) -> float:
    """Dynamic range as a fraction of the largest line integral in the scan."""
    vals = sino.values if isinstance(sino, Sinogram) else np.asarray(sino)
    return float(frac * vals.max())


def apply_overexposure(sino, kappa: float):
    """Per-view threshold ``s_b = max(p_b,max - kappa, 0)``; readings at or below it become 0.

    Returns the flattened observations (every zeroed reading flagged as
    lower-saturated, ``y = -1``, ``s = s_b``) and the per-view thresholds.
    """
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    q = sino.values if isinstance(sino, Sinogram) else np.asarray(sino, dtype=float)
    s_beta = np.maximum(q.max(axis=1) - kappa, 0.0)
    s_ray = np.broadcast_to(s_beta[:, None], q.shape)
    flagged = q <= s_ray
    p = np.where(flagged, 0.0, q).ravel()
    psi = flagged.ravel()
    y = np.where(psi, -1, 0).astype(np.int8)
    s = np.where(psi, s_ray.ravel(), 0.0)
    return SaturatedObservations(p, psi, y, s), s_beta


def true_indicator(q_clean, s_beta, tol: float = 1e-12) -> np.ndarray:
    """Rays that actually cross the object but fall below their view's threshold."""
    q = q_clean.values if isinstance(q_clean, Sinogram) else np.asarray(q_clean, dtype=float)
    return ((q <= np.asarray(s_beta)[:, None]) & (q > tol)).ravel()


def add_projection_noise(sino, sigma: float, seed: int = 0) -> np.ndarray:
    q = sino.values if isinstance(sino, Sinogram) else np.asarray(sino, dtype=float)
    if sigma <= 0:
        return q.copy()
    return q + sigma * np.random.default_rng(seed).standard_normal(q.shape)


def rmse_hu(img_true, img_hat, mu_water: float = MU_WATER) -> float:
    """RMS difference after mapping both images to ``1000 (mu - mu_w) / mu_w``."""
    a = np.asarray(img_true, dtype=float)
    b = np.asarray(img_hat, dtype=float)
    if a.shape != b.shape:
        raise ValueError("images live on different grids")
    if not mu_water > 0:
        raise ValueError("mu_water must be positive")
    hu_a = 1000.0 * (a - mu_water) / mu_water
    hu_b = 1000.0 * (b - mu_water) / mu_water
    return float(np.sqrt(np.mean((hu_a - hu_b) ** 2)))
