"""Masked evaluation metrics: NRMSE, PSNR, SSIM, and brain-mask estimation.

All similarity metrics are computed only over a brain mask estimated from the
standard-dose reference image support.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateInputError, ShapeError
from .losses import SSIMParams, ssim_map
from .tensor import Tensor


@dataclass
class BrainMask:
    """Boolean support region over which metrics are read."""

    mask: np.ndarray

    @property
    def coverage(self) -> float:
        return float(self.mask.mean())


@dataclass
class MetricsRecord:
    subject: str
    slice_index: int | str
    method: str
    drf: float
    nrmse: float
    psnr_db: float
    ssim: float

    def as_row(self):
        return (self.subject, self.slice_index, self.method, self.drf,
                self.nrmse, self.psnr_db, self.ssim)


def estimate_brain_mask(reference: np.ndarray) -> BrainMask:
    """Support mask: 5% peak threshold, largest connected component, holes filled."""
    ref = np.asarray(reference, dtype=np.float64)
    peak = ref.max()
    if peak <= 0:
        raise DegenerateInputError("cannot estimate a brain mask from an all-zero image")
    fg = ref > 0.05 * peak
    labels, n = ndimage.label(fg)
    if n == 0:
        raise DegenerateInputError("brain mask is empty after thresholding")
    sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=np.arange(1, n + 1))
    largest = 1 + int(np.argmax(sizes))
    mask = ndimage.binary_fill_holes(labels == largest)
    return BrainMask(mask=mask)


def _masked(x, ref, mask):
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ShapeError(f"image/reference shape mismatch {x.shape} vs {ref.shape}")
    if mask is None:
        m = np.ones(x.shape, dtype=bool)
    else:
        m = mask.mask if isinstance(mask, BrainMask) else np.asarray(mask, dtype=bool)
        if m.shape != x.shape:
            raise ShapeError(f"mask shape {m.shape} does not match image {x.shape}")
    if not m.any():
        raise DegenerateInputError("mask selects no pixels")
    return x[m], ref[m]


def nrmse(x, reference, mask=None) -> float:
    """Root of sum squared error over the mask, normalized by reference energy."""
    xv, rv = _masked(x, reference, mask)
    energy = float((rv ** 2).sum())
    if energy == 0:
        raise DegenerateInputError("reference has zero energy within the mask")
    return float(math.sqrt(float(((xv - rv) ** 2).sum()) / energy))


def psnr(x, reference, mask=None) -> float:
    """20*log10(MAX / rms error) in dB, MAX taken from the masked reference.

    Identical images are reported as the perfect-match sentinel +inf.
    """
    xv, rv = _masked(x, reference, mask)
    mse = float(((xv - rv) ** 2).mean())
    if mse == 0.0:
        return math.inf
    peak = float(rv.max())
    return 20.0 * math.log10(peak / math.sqrt(mse))


def masked_ssim(x, reference, params: SSIMParams, mask=None) -> float:
    """Mean SSIM over valid window centers whose center pixel is masked."""
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if x.shape != ref.shape or x.ndim != 2:
        raise ShapeError(f"expected matching 2-d images, got {x.shape} vs {ref.shape}")
    smap = ssim_map(Tensor(x[None, None]), Tensor(ref[None, None]), params).data[0, 0]
    off = (params.window_size - 1) // 2
    if mask is None:
        valid = np.ones(smap.shape, dtype=bool)
    else:
        m = mask.mask if isinstance(mask, BrainMask) else np.asarray(mask, dtype=bool)
        valid = m[off:off + smap.shape[0], off:off + smap.shape[1]]
    if not valid.any():
        raise DegenerateInputError("mask selects no valid window centers")
    return float(smap[valid].mean())


def slice_metrics(x, reference, params: SSIMParams, mask=None):
    """(nrmse, psnr_db, ssim) of one slice against its reference."""
    if mask is None:
        mask = estimate_brain_mask(reference)
    return (nrmse(x, reference, mask), psnr(x, reference, mask),
            masked_ssim(x, reference, params, mask))
