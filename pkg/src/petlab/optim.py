"""RMSprop optimizer and the exponential learning-rate schedule.

Standard non-centered RMSprop: s <- rho*s + (1-rho)*g^2, then
p <- p - lr * g / (sqrt(s) + eps).
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, NumericsError
from .tensor import Parameter


class OptimizerState:
    """Per-parameter squared-gradient accumulators, keyed by parameter name."""

    def __init__(self, params: list[Parameter]):
        self.accumulators = {p.name: np.zeros(p.tensor.shape, dtype=np.float32)
                             for p in params}


def rmsprop_step(params: list[Parameter], state: OptimizerState, lr: float,
                 rho: float = 0.9, eps: float = 1e-8) -> None:
    """One in-place update; parameters with no gradient are left unchanged."""
    for p in params:
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient in parameter {p.name!r}")
        s = state.accumulators[p.name]
        s *= rho
        s += (1.0 - rho) * (g * g)
        p.tensor.data -= (lr * g / (np.sqrt(s) + eps)).astype(p.tensor.data.dtype)


def lr_at_epoch(epoch: int, epochs: int, lr_start: float, lr_end: float) -> float:
    """Exponential interpolation from lr_start (epoch 0) to lr_end (last epoch)."""
    if not (0 <= epoch < epochs):
        raise ConfigError(f"epoch {epoch} outside 0..{epochs - 1}")
    if epochs == 1:
        return lr_start
    return float(lr_start * (lr_end / lr_start) ** (epoch / (epochs - 1)))
