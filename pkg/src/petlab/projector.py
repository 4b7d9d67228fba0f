"""Parallel-beam forward/back projector.

Rays are sampled on a rotated unit-spaced grid with bilinear interpolation,
which makes the projector a sparse linear gather; back projection scatters
with the same weights and is therefore the exact adjoint. All arithmetic is
64-bit.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DataError


class ParallelGeometry:
    """Precomputed ray-sampling geometry for one (H, W, n_angles, n_bins) setup.

    Angle a is a*pi/n_angles; detector bin b sits at signed offset
    u = b - (n_bins - 1)/2 from the rotation centre, in pixel units.
    """

    def __init__(self, h: int, w: int, n_angles: int, n_bins: int):
        if n_angles < 8:
            raise ConfigError(f"n_angles must be >= 8, got {n_angles}")
        if n_bins < h:
            raise ConfigError(f"n_bins must be >= image height, got {n_bins} < {h}")
        self.h, self.w = h, w
        self.n_angles, self.n_bins = n_angles, n_bins

        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        angles = np.arange(n_angles) * np.pi / n_angles
        u = np.arange(n_bins) - (n_bins - 1) / 2.0
        t = np.arange(h) - (h - 1) / 2.0

        cos = np.cos(angles)[:, None, None]
        sin = np.sin(angles)[:, None, None]
        uu = u[None, None, :]
        tt = t[None, :, None]
        px = cx + uu * cos - tt * sin
        py = cy + uu * sin + tt * cos

        x0 = np.floor(px).astype(np.int64)
        y0 = np.floor(py).astype(np.int64)
        fx = px - x0
        fy = py - y0
        x1, y1 = x0 + 1, y0 + 1

        corners = ((y0, x0, (1 - fy) * (1 - fx)), (y0, x1, (1 - fy) * fx),
                   (y1, x0, fy * (1 - fx)), (y1, x1, fy * fx))
        idx = np.empty((4,) + px.shape, dtype=np.int64)
        wgt = np.empty((4,) + px.shape, dtype=np.float64)
        for k, (yk, xk, wk) in enumerate(corners):
            valid = (yk >= 0) & (yk < h) & (xk >= 0) & (xk < w)
            idx[k] = np.where(valid, yk * w + xk, 0)
            wgt[k] = np.where(valid, wk, 0.0)
        self._idx = idx
        self._wgt = wgt
        self.angles = angles

        yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        radius = min(h, w) / 2.0 - 1.0
        self.fov_mask = ((yy - cy) ** 2 + (xx - cx) ** 2) <= radius ** 2

    def forward(self, image: np.ndarray, angle_indices=None) -> np.ndarray:
        """Line integrals [n_angles(, selected), n_bins] of a 2-d image."""
        image = np.asarray(image, dtype=np.float64)
        if image.shape != (self.h, self.w):
            raise DataError(f"image shape {image.shape} != geometry {(self.h, self.w)}")
        if not np.all(np.isfinite(image)):
            raise DataError("image must be finite")
        idx, wgt = self._select(angle_indices)
        return np.einsum("kalb,kalb->ab", wgt, image.reshape(-1)[idx])

    def back(self, sinogram: np.ndarray, angle_indices=None) -> np.ndarray:
        """Adjoint of :meth:`forward`; returns an [H, W] image."""
        idx, wgt = self._select(angle_indices)
        sinogram = np.asarray(sinogram, dtype=np.float64)
        if sinogram.shape != idx.shape[1::2]:
            raise DataError(f"sinogram shape {sinogram.shape} != {(idx.shape[1], idx.shape[3])}")
        contrib = wgt * sinogram[None, :, None, :]
        flat = np.bincount(idx.reshape(-1), weights=contrib.reshape(-1),
                           minlength=self.h * self.w)
        return flat.reshape(self.h, self.w)

    def _select(self, angle_indices):
        if angle_indices is None:
            return self._idx, self._wgt
        sel = np.asarray(angle_indices, dtype=np.int64)
        return self._idx[:, sel], self._wgt[:, sel]


_GEOMETRY_CACHE: dict[tuple, ParallelGeometry] = {}


def get_geometry(h: int, w: int, n_angles: int, n_bins: int) -> ParallelGeometry:
    key = (h, w, n_angles, n_bins)
    geo = _GEOMETRY_CACHE.get(key)
    if geo is None:
        geo = _GEOMETRY_CACHE[key] = ParallelGeometry(h, w, n_angles, n_bins)
    return geo


def forward_project(image: np.ndarray, n_angles: int, n_bins: int) -> np.ndarray:
    """Convenience wrapper: line integrals of one slice."""
    h, w = np.asarray(image).shape
    return get_geometry(h, w, n_angles, n_bins).forward(image)


def back_project(sinogram: np.ndarray, h: int, w: int) -> np.ndarray:
    """Convenience wrapper: adjoint applied to one sinogram."""
    n_angles, n_bins = np.asarray(sinogram).shape
    return get_geometry(h, w, n_angles, n_bins).back(sinogram)
