"""Fully convolutional encoder-decoder residual denoising network.

The encoder applies n_p stages of n_c (conv3x3 -> batch-norm -> relu) blocks
followed by 2x2 max pooling, doubling channel width per stage; a bottleneck of
n_c blocks sits below. The decoder mirrors the encoder with bilinear 2x
upsampling and, when enabled, concatenates the matching encoder output before
its conv blocks. A final plain 3x3 convolution maps to one channel; when the
residual connection is enabled the center input slice is added to that output,
so the body learns the difference between standard-dose and low-dose images.

Inputs are 2.5D stacks: adjacent axial slices as channels around the slice
being predicted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .ops import (BatchNormState, batch_norm, bilinear_upsample2x, concat_channels,
                  conv2d_same, maxpool2x2, relu, add)
from .tensor import Parameter, Tensor

SKIP_MODES = ("both", "concat_only", "residual_only", "none")


@dataclass(frozen=True)
class NetworkConfig:
    """One architecture variant of the denoiser."""

    n_p: int = 3
    n_c: int = 2
    base_channels: int = 16
    n_slices: int = 3
    skip_mode: str = "both"
    seed: int = 0

    def __post_init__(self):
        if not (2 <= self.n_p <= 5):
            raise ConfigError(f"n_p must be in 2..5, got {self.n_p}")
        if not (1 <= self.n_c <= 3):
            raise ConfigError(f"n_c must be in 1..3, got {self.n_c}")
        if self.n_slices not in (1, 3, 5, 7):
            raise ConfigError(f"n_slices must be odd in 1,3,5,7, got {self.n_slices}")
        if self.base_channels < 8:
            raise ConfigError(f"base_channels must be >= 8, got {self.base_channels}")
        if self.skip_mode not in SKIP_MODES:
            raise ConfigError(f"skip_mode must be one of {SKIP_MODES}, got {self.skip_mode!r}")

    @property
    def uses_concat(self) -> bool:
        return self.skip_mode in ("both", "concat_only")

    @property
    def uses_residual(self) -> bool:
        return self.skip_mode in ("both", "residual_only")


@dataclass
class SliceStack:
    """Adjacent slices stacked as channels; prediction targets the center."""

    channels: np.ndarray
    center_index: int


def stack_slices(volume: np.ndarray, z: int, n_slices: int) -> SliceStack:
    """Channels are slices z-k..z+k, out-of-range indices edge-replicated."""
    if n_slices % 2 == 0:
        raise ConfigError(f"n_slices must be odd, got {n_slices}")
    volume = np.asarray(volume)
    d = volume.shape[0]
    if not (0 <= z < d):
        raise ConfigError(f"slice index {z} outside volume of depth {d}")
    k = (n_slices - 1) // 2
    idx = np.clip(np.arange(z - k, z + k + 1), 0, d - 1)
    return SliceStack(channels=volume[idx].astype(np.float32, copy=True), center_index=z)


def truncated_normal(rng, shape, std=0.02, bound=2.0) -> np.ndarray:
    """Zero-mean Gaussian, redrawing values beyond ±bound standard deviations."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return (out * std).astype(np.float32)


class ConvBlock:
    """conv3x3 [+ batch-norm + relu]."""

    def __init__(self, name: str, in_ch: int, out_ch: int, rng, with_bn=True,
                 index: int = 1):
        self.name = name
        self.with_bn = with_bn
        self.weight = Parameter(f"{name}.conv{index}.weight",
                                Tensor(truncated_normal(rng, (out_ch, in_ch, 3, 3))))
        self.bias = Parameter(f"{name}.conv{index}.bias",
                              Tensor(np.zeros(out_ch, dtype=np.float32)))
        if with_bn:
            self.gamma = Parameter(f"{name}.bn{index}.gamma",
                                   Tensor(np.ones(out_ch, dtype=np.float32)))
            self.beta = Parameter(f"{name}.bn{index}.beta",
                                  Tensor(np.zeros(out_ch, dtype=np.float32)))
            self.bn_state = BatchNormState(out_ch)
            self.bn_name = f"{name}.bn{index}"

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        h = conv2d_same(x, self.weight.tensor, self.bias.tensor)
        if self.with_bn:
            h = relu(batch_norm(h, self.gamma.tensor, self.beta.tensor,
                                self.bn_state, mode))
        return h

    def parameters(self):
        if self.with_bn:
            return [self.weight, self.bias, self.gamma, self.beta]
        return [self.weight, self.bias]


def _stage(name, in_ch, out_ch, n_c, rng):
    blocks = []
    for i in range(n_c):
        blocks.append(ConvBlock(name, in_ch if i == 0 else out_ch, out_ch, rng,
                                index=i + 1))
    return blocks


class Network:
    """Denoiser instance: ordered parameters plus the stage topology."""

    def __init__(self, config: NetworkConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        base = config.base_channels

        self.enc_stages = []
        in_ch = config.n_slices
        for s in range(config.n_p):
            out_ch = base * (2 ** s)
            self.enc_stages.append(_stage(f"enc{s}", in_ch, out_ch, config.n_c, rng))
            in_ch = out_ch

        mid_ch = base * (2 ** config.n_p)
        self.bottleneck = _stage("mid", in_ch, mid_ch, config.n_c, rng)

        self.dec_stages = []
        up_ch = mid_ch
        for s in reversed(range(config.n_p)):
            out_ch = base * (2 ** s)
            cat_ch = up_ch + (out_ch if config.uses_concat else 0)
            self.dec_stages.append(_stage(f"dec{s}", cat_ch, out_ch, config.n_c, rng))
            up_ch = out_ch

        self.final = ConvBlock("final", base, 1, rng, with_bn=False)

    def parameters(self) -> list[Parameter]:
        params = []
        for stage in self.enc_stages:
            for blk in stage:
                params.extend(blk.parameters())
        for blk in self.bottleneck:
            params.extend(blk.parameters())
        for stage in self.dec_stages:
            for blk in stage:
                params.extend(blk.parameters())
        params.extend(self.final.parameters())
        names = [p.name for p in params]
        assert len(names) == len(set(names)), "duplicate parameter names"
        return params

    def bn_layers(self):
        out = []
        for stage in self.enc_stages + [self.bottleneck] + self.dec_stages:
            for blk in stage:
                if blk.with_bn:
                    out.append((blk.bn_name, blk.bn_state))
        return out

    @property
    def parameter_count(self) -> int:
        return sum(int(np.prod(p.tensor.shape)) for p in self.parameters())

    def forward(self, x: Tensor, mode: str = "train") -> Tensor:
        """[N, n_slices, H, W] -> [N, 1, H, W]."""
        if mode not in ("train", "eval"):
            raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
        if x.data.ndim != 4 or x.shape[1] != self.config.n_slices:
            raise ShapeError(f"expected [N,{self.config.n_slices},H,W], got {x.shape}")
        h_, w_ = x.shape[2], x.shape[3]
        div = 2 ** self.config.n_p
        if h_ % div or w_ % div:
            raise ConfigError(
                f"spatial size {h_}x{w_} not divisible by 2^n_p = {div}")

        h = x
        skips = []
        for stage in self.enc_stages:
            for blk in stage:
                h = blk(h, mode)
            skips.append(h)
            h = maxpool2x2(h)
        for blk in self.bottleneck:
            h = blk(h, mode)
        for i, stage in enumerate(self.dec_stages):
            h = bilinear_upsample2x(h)
            if self.config.uses_concat:
                h = concat_channels(h, skips[self.config.n_p - 1 - i])
            for blk in stage:
                h = blk(h, mode)
        out = self.final(h, mode)
        if self.config.uses_residual:
            center = (self.config.n_slices - 1) // 2
            out = add(out, Tensor(x.data[:, center:center + 1]))
        return out


def build_network(config: NetworkConfig) -> Network:
    return Network(config)


def batch_from_stacks(stacks: list[SliceStack]) -> Tensor:
    """Assemble [N, n_slices, H, W] input from slice stacks."""
    return Tensor(np.stack([s.channels for s in stacks]).astype(np.float32))
