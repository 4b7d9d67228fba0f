"""Ordered-subsets expectation-maximization reconstruction.

The multiplicative update x <- x * A_s^T(y_s / A_s x) / A_s^T 1 cycles through
interleaved angle subsets within each iteration; with one subset it reduces to
plain MLEM. Pixels outside the reconstruction circle are fixed at zero.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .counts import SinogramCounts
from .errors import ConfigError, DataError
from .projector import ParallelGeometry

logger = logging.getLogger(__name__)

_RATIO_GUARD = 1e-10


@dataclass(frozen=True)
class ReconConfig:
    """Subset/iteration schedule. Desk-scale default: 6 subsets, 2 iterations."""

    n_subsets: int = 6
    n_iterations: int = 2
    init_value: float = 1.0

    def __post_init__(self):
        if self.n_subsets < 1:
            raise ConfigError(f"n_subsets must be >= 1, got {self.n_subsets}")
        if self.n_iterations < 1:
            raise ConfigError(f"n_iterations must be >= 1, got {self.n_iterations}")
        if self.init_value <= 0:
            raise ConfigError("init_value must be > 0")


@dataclass
class ReconImage:
    """Nonnegative reconstructed slice with provenance."""

    pixels: np.ndarray
    provenance: dict

    @property
    def shape(self):
        return self.pixels.shape


def partition_subsets(n_angles: int, n_subsets: int) -> list[list[int]]:
    """Interleaved angle subsets: subset k holds angles k, k+n_subsets, ..."""
    if n_angles % n_subsets != 0:
        raise ConfigError(
            f"n_angles ({n_angles}) must be divisible by n_subsets ({n_subsets})")
    return [list(range(k, n_angles, n_subsets)) for k in range(n_subsets)]


def osem_reconstruct(counts, geometry: ParallelGeometry, config: ReconConfig,
                     provenance: dict | None = None) -> ReconImage:
    """Reconstruct one slice from sinogram counts.

    ``counts`` is a SinogramCounts or a plain [n_angles, n_bins] integer array.
    """
    y = counts.counts if isinstance(counts, SinogramCounts) else np.asarray(counts)
    if y.shape != (geometry.n_angles, geometry.n_bins):
        raise DataError(f"counts shape {y.shape} != geometry "
                        f"{(geometry.n_angles, geometry.n_bins)}")
    if np.any(y < 0):
        raise DataError("counts must be nonnegative")
    y = y.astype(np.float64)

    subsets = partition_subsets(geometry.n_angles, config.n_subsets)
    fov = geometry.fov_mask
    sens = []
    valid = []
    for angles in subsets:
        s = geometry.back(np.ones((len(angles), geometry.n_bins)), angles)
        v = fov & (s > _RATIO_GUARD)
        dead = int((fov & ~v).sum())
        if dead:
            logger.warning("masking %d zero-sensitivity pixels inside FOV", dead)
        sens.append(s)
        valid.append(v)

    x = np.where(fov, float(config.init_value), 0.0)
    for _ in range(config.n_iterations):
        for angles, s, v in zip(subsets, sens, valid):
            proj = geometry.forward(x, angles)
            ratio = y[angles] / (proj + _RATIO_GUARD)
            bp = geometry.back(ratio, angles)
            x = np.where(v, x * bp / np.where(v, s, 1.0), 0.0)

    prov = dict(provenance or {})
    prov.update({"n_subsets": config.n_subsets, "n_iterations": config.n_iterations})
    if isinstance(counts, SinogramCounts):
        prov.update(counts.provenance)
    return ReconImage(pixels=x.astype(np.float32), provenance=prov)
