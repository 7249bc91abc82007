"""Flat-detector fan-beam geometry and image grids."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["ImageGrid", "FanBeamGeometry", "Sinogram"]


@dataclass(frozen=True)
class ImageGrid:
    """``ny x nx`` pixels of side ``pixel_size`` (mm) centred on the isocentre.

    Row ``iy`` sits at ``y = (iy + 0.5 - ny/2) * pixel_size`` and column
    ``ix`` at ``x = (ix + 0.5 - nx/2) * pixel_size``.
    """

    nx: int = 256
    ny: int = 256
    pixel_size: float = 1.0

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1 or not self.pixel_size > 0:
            raise ValueError("grid needs positive pixel counts and pixel size")

    @property
    def shape(self):
        return (self.ny, self.nx)

    @property
    def size(self):
        return self.nx * self.ny

    @property
    def half_extent(self):
        return 0.5 * self.nx * self.pixel_size, 0.5 * self.ny * self.pixel_size

    def centers(self):
        """Pixel-centre coordinate arrays ``(X, Y)`` of shape ``(ny, nx)``."""
        xs = (np.arange(self.nx) + 0.5 - 0.5 * self.nx) * self.pixel_size
        ys = (np.arange(self.ny) + 0.5 - 0.5 * self.ny) * self.pixel_size
        return np.meshgrid(xs, ys)

    def zeros(self):
        return np.zeros(self.shape)


@dataclass(frozen=True)
class FanBeamGeometry:
    """Circular source trajectory with an equally spaced flat detector.

    At view angle ``b`` the source sits at ``D (cos b, sin b)``; the detector
    line passes through ``-D_det (cos b, sin b)`` along ``(-sin b, cos b)``
    and bin ``k`` is centred at ``(k - (n_bins-1)/2) * detector_pixel``.
    """

    source_to_isocenter: float = 750.0
    isocenter_to_detector: float = 450.0
    n_views: int = 360
    angular_step: float = 1.0
    n_bins: int = 620
    detector_pixel: float = 1.0
    start_angle: float = 0.0

    def __post_init__(self):
        if not (self.source_to_isocenter > 0 and self.isocenter_to_detector > 0):
            raise ValueError("distances must be positive")
        if self.n_views < 1 or self.n_bins < 1 or not self.detector_pixel > 0 or not self.angular_step > 0:
            raise ValueError("views, bins, pixel and angular step must be positive")

    @property
    def detector_length(self):
        return self.n_bins * self.detector_pixel

    @property
    def source_to_detector(self):
        return self.source_to_isocenter + self.isocenter_to_detector

    @property
    def scan_range(self):
        return self.n_views * self.angular_step

    @property
    def shape(self):
        return (self.n_views, self.n_bins)

    def angles(self):
        return np.deg2rad(self.start_angle + self.angular_step * np.arange(self.n_views))

    def bin_positions(self):
        return (np.arange(self.n_bins) - 0.5 * (self.n_bins - 1)) * self.detector_pixel

    def ray_endpoints(self):
        """Source and detector points, each of shape ``(n_views, n_bins, 2)``."""
        b = self.angles()[:, None]
        u = self.bin_positions()[None, :]
        D, Dd = self.source_to_isocenter, self.isocenter_to_detector
        src = np.stack(np.broadcast_arrays(D * np.cos(b), D * np.sin(b)), axis=-1) * np.ones((1, self.n_bins, 1))
        det = np.stack((-Dd * np.cos(b) - u * np.sin(b), -Dd * np.sin(b) + u * np.cos(b)), axis=-1)
        return src, det

    @classmethod
    def desk(cls, grid: ImageGrid, **kw) -> "FanBeamGeometry":
        """Paper trajectory with detector bins matched to a coarser grid."""
        scale = grid.pixel_size
        kw.setdefault("n_bins", int(round(620 / scale)))
        kw.setdefault("detector_pixel", scale)
        return cls(**kw)


@dataclass(frozen=True)
class Sinogram:
    """Line integrals ``q`` indexed by ``(view, bin)``."""

    values: np.ndarray

    @property
    def view_max(self):
        return self.values.max(axis=1)
