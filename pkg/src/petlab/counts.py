"""Poisson count acquisition and binomial dose thinning.

Counts are kept binned in the sinogram domain: thinning each bin with a
Binomial(count, p) draw is distributionally identical to keeping each
listmode event independently with probability p, at a fraction of the memory.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, DegenerateInputError


@dataclass(frozen=True)
class AcquisitionConfig:
    """Per-slice acquisition parameters at standard dose."""

    n_angles: int = 90
    n_bins: int = 96
    total_counts: float = 5e5
    seed: int = 0

    def __post_init__(self):
        if self.n_angles < 8:
            raise ConfigError(f"n_angles must be >= 8, got {self.n_angles}")
        if self.total_counts <= 0:
            raise ConfigError("total_counts must be > 0")


@dataclass(frozen=True)
class DoseConfig:
    """Kept-event fraction p; the dose reduction factor is 1/p."""

    fraction: float

    def __post_init__(self):
        if not (0.0 < self.fraction <= 1.0):
            raise ConfigError(f"dose fraction must be in (0, 1], got {self.fraction}")

    @property
    def drf(self) -> float:
        return 1.0 / self.fraction


@dataclass
class SinogramCounts:
    """Nonnegative integer photon counts over (angle, detector bin)."""

    counts: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        if not np.issubdtype(self.counts.dtype, np.integer):
            raise DataError("counts must be integers")
        if np.any(self.counts < 0):
            raise DataError("counts must be nonnegative")


def acquire_counts(expected: np.ndarray, total_counts: float, seed: int) -> SinogramCounts:
    """Scale expected line integrals to ``total_counts`` and draw Poisson samples.

    ``expected`` may be a single [n_angles, n_bins] sinogram or a stack of
    them; the scaling normalizes the sum of the whole array.
    """
    expected = np.asarray(expected, dtype=np.float64)
    if np.any(expected < 0) or not np.all(np.isfinite(expected)):
        raise DataError("expected line integrals must be finite and nonnegative")
    total = expected.sum()
    if total <= 0:
        raise DegenerateInputError("expected line integrals are all zero")
    lam = expected * (float(total_counts) / total)
    rng = np.random.default_rng(seed)
    counts = rng.poisson(lam).astype(np.int64)
    return SinogramCounts(counts=counts,
                          provenance={"total_counts": float(total_counts), "seed": int(seed)})


def thin_counts(counts: SinogramCounts, dose, seed: int) -> SinogramCounts:
    """Binomially thin each bin, keeping events with probability ``dose``.

    ``dose`` may be a DoseConfig or a plain fraction; 0 and 1 are handled
    exactly (all-zero output / identical copy).
    """
    p = dose.fraction if isinstance(dose, DoseConfig) else float(dose)
    if not (0.0 <= p <= 1.0):
        raise ConfigError(f"thinning fraction must be in [0, 1], got {p}")
    src = counts.counts
    if p == 0.0:
        kept = np.zeros_like(src)
    elif p == 1.0:
        kept = src.copy()
    else:
        rng = np.random.default_rng(seed)
        kept = rng.binomial(src, p).astype(np.int64)
    prov = dict(counts.provenance)
    prov.update({"thinned_fraction": p, "thin_seed": int(seed)})
    return SinogramCounts(counts=kept, provenance=prov)
