"""Synthetic brain-like activity phantoms.

A phantom is a nonnegative 3D activity map: a superellipsoid "head" whose
interior carries a cortical rim, slowly varying smooth structure (so adjacent
slices stay strongly correlated), and optional small hyperintense lesions.
Outside the head the activity is exactly zero, and the top/bottom slices are
air by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass
class PhantomVolume:
    """Nonnegative activity volume [D,H,W] in arbitrary units."""

    voxels: np.ndarray
    voxel_size: float
    seed: int

    @property
    def shape(self):
        return self.voxels.shape


def generate_phantom(seed: int, d: int, h: int, w: int, n_lesions: int = 2,
                     voxel_size: float = 1.0) -> PhantomVolume:
    """Deterministically generate a brain-like phantom volume.

    d must be at least 7 (7-slice input stacks); h and w must be equal.
    """
    if d < 7:
        raise ConfigError(f"phantom depth must be >= 7, got {d}")
    if h != w:
        raise ConfigError(f"phantom slices must be square, got {h}x{w}")
    if n_lesions < 0:
        raise ConfigError("n_lesions must be >= 0")

    rng = np.random.default_rng(seed)
    cz, cy, cx = (d - 1) / 2.0, (h - 1) / 2.0, (w - 1) / 2.0
    zz, yy, xx = np.meshgrid(np.arange(d), np.arange(h), np.arange(w), indexing="ij")

    # fixed in-plane head ellipse for all brain-bearing slices, so adjacent
    # slices share their support; outermost slice at each end stays air
    ax = (0.40 + 0.03 * rng.random()) * w
    ay = (0.44 + 0.03 * rng.random()) * h
    rnorm = np.sqrt(((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2)
    brain_z = (zz >= 1) & (zz <= d - 2)
    head = (rnorm < 1.0) & brain_z

    # per-slice axial taper: pure intensity scaling, leaves slice correlation intact
    az = cz - 0.5
    rz = np.clip(np.abs(zz - cz) / az, 0.0, 1.0)
    taper = 0.55 + 0.45 * np.sqrt(np.maximum(0.0, 1.0 - rz ** 2))

    vol = np.zeros((d, h, w), dtype=np.float64)
    base = np.ones_like(vol)
    # cortical rim: smooth high-activity ring near the head boundary
    base += 0.7 * np.exp(-(((rnorm - 0.86) / 0.09) ** 2))
    # central low-activity region (ventricle-like)
    vy = cy + rng.uniform(-0.04, 0.04) * h
    vx = cx + rng.uniform(-0.04, 0.04) * w
    base -= 0.5 * np.exp(-(((yy - vy) / (0.10 * h)) ** 2 + ((xx - vx) / (0.08 * w)) ** 2
                           + ((zz - cz) / (0.45 * d)) ** 2))

    # slowly varying interior structure, long z correlation length
    for _ in range(6):
        bz = cz + rng.uniform(-0.35, 0.35) * d
        by = cy + rng.uniform(-0.30, 0.30) * h
        bx = cx + rng.uniform(-0.30, 0.30) * w
        sz = rng.uniform(0.25, 0.40) * d
        sy = rng.uniform(0.12, 0.25) * h
        sx = rng.uniform(0.12, 0.25) * w
        amp = rng.uniform(-0.35, 0.35)
        base += amp * np.exp(-(((zz - bz) / sz) ** 2 + ((yy - by) / sy) ** 2
                               + ((xx - bx) / sx) ** 2))

    base = np.maximum(base, 0.1)

    # hyperintense lesions: compactly supported ellipsoids with smooth falloff
    for _ in range(n_lesions):
        theta = rng.uniform(0, 2 * np.pi)
        rad = rng.uniform(0.15, 0.55)
        ly = cy + rad * np.sin(theta) * ay * 0.9
        lx = cx + rad * np.cos(theta) * ax * 0.9
        lz = cz + rng.uniform(-0.4, 0.4) * (cz - 1.0)
        sy = rng.uniform(1.8, 3.5)
        sx = rng.uniform(1.8, 3.5)
        sz = rng.uniform(1.5, 2.5)
        r2 = ((zz - lz) / sz) ** 2 + ((yy - ly) / sy) ** 2 + ((xx - lx) / sx) ** 2
        base += rng.uniform(1.5, 2.5) * np.maximum(0.0, 1.0 - r2)

    vol = np.where(head, base * taper, 0.0)
    inside = vol[head]
    if inside.size:
        vol /= inside.mean()
    return PhantomVolume(voxels=vol.astype(np.float32), voxel_size=voxel_size, seed=seed)


def air_slice_mask(volume: np.ndarray) -> np.ndarray:
    """Boolean [D] mask, True where a slice is pure air (all zero)."""
    return np.all(volume.reshape(volume.shape[0], -1) == 0, axis=1)
