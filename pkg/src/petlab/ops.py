"""Differentiable operations for the tensor engine.

Exactly the operation set the denoising network and its losses need:
3x3 same-padded convolution, batch normalization, ReLU, 2x2 max/avg pooling,
bilinear 2x upsampling, channel concatenation, elementwise arithmetic, a
fixed-kernel valid filter (for windowed similarity statistics), and reductions.

Internal accumulation for convolutions and reductions is performed in 64-bit
and stored back in the input dtype.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError, StateError, ContractError
from .tensor import Tensor, active_tape


def _result_dtype(*tensors):
    return np.float64 if any(t.data.dtype == np.float64 for t in tensors) else np.float32


def _emit(inputs, out_data, backward_fn):
    """Wrap out_data in a Tensor; record on the active tape when grads flow."""
    tape = active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        tape.record(inputs, out, backward_fn)
    return out


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))


# ---------------------------------------------------------------------------
# convolution and filtering

def conv2d_same(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """3x3 convolution with one-pixel zero padding; spatial size preserved.

    x: [N,C,H,W], weight: [F,C,3,3], bias: [F] -> [N,F,H,W].
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(f"conv2d_same expects 4-d input/weight, got {x.shape} / {weight.shape}")
    n, c, h, w = x.shape
    f, cw, kh, kw = weight.shape
    if (kh, kw) != (3, 3):
        raise ShapeError(f"conv2d_same supports 3x3 kernels only, got {kh}x{kw}")
    if cw != c:
        raise ShapeError(f"channel mismatch: input has {c} channels, weight expects {cw}")
    if bias.data.ndim != 1 or bias.shape[0] != f:
        raise ShapeError(f"bias must have shape ({f},), got {bias.shape}")

    xp = np.zeros((n, c, h + 2, w + 2), dtype=np.float64)
    xp[:, :, 1:-1, 1:-1] = x.data
    w64 = weight.data.astype(np.float64)
    acc = np.zeros((f, n, h, w), dtype=np.float64)
    for i in range(3):
        for j in range(3):
            acc += np.tensordot(w64[:, :, i, j], xp[:, :, i:i + h, j:j + w], axes=(1, 1))
    out = acc.transpose(1, 0, 2, 3) + bias.data.astype(np.float64)[None, :, None, None]
    dtype = _result_dtype(x, weight, bias)
    needs = (x.requires_grad, weight.requires_grad, bias.requires_grad)

    def backward(g):
        g64 = g.astype(np.float64)
        gx = gw = gb = None
        if needs[2]:
            gb = g64.sum(axis=(0, 2, 3)).astype(dtype)
        if needs[1]:
            dw = np.empty((f, c, 3, 3), dtype=np.float64)
            for i in range(3):
                for j in range(3):
                    dw[:, :, i, j] = np.tensordot(
                        g64, xp[:, :, i:i + h, j:j + w], axes=([0, 2, 3], [0, 2, 3]))
            gw = dw.astype(dtype)
        if needs[0]:
            dxp = np.zeros_like(xp)
            for i in range(3):
                for j in range(3):
                    dxp[:, :, i:i + h, j:j + w] += np.tensordot(
                        w64[:, :, i, j], g64, axes=(0, 1)).transpose(1, 0, 2, 3)
            gx = dxp[:, :, 1:-1, 1:-1].astype(dtype)
        return gx, gw, gb

    return _emit((x, weight, bias), out.astype(dtype), backward)


def filter2d_valid(x: Tensor, kernel: np.ndarray) -> Tensor:
    """Depthwise valid cross-correlation with a fixed (non-trainable) 2-d kernel.

    Used for windowed local statistics. x: [N,C,H,W] -> [N,C,H-kh+1,W-kw+1].
    """
    if x.data.ndim != 4:
        raise ShapeError(f"filter2d_valid expects 4-d input, got {x.shape}")
    kernel = np.asarray(kernel, dtype=np.float64)
    kh, kw = kernel.shape
    n, c, h, w = x.shape
    ho, wo = h - kh + 1, w - kw + 1
    if ho < 1 or wo < 1:
        raise ConfigError(f"image {h}x{w} smaller than filter window {kh}x{kw}")
    x64 = x.data.astype(np.float64)
    out = np.zeros((n, c, ho, wo), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            out += kernel[i, j] * x64[:, :, i:i + ho, j:j + wo]
    dtype = x.data.dtype

    def backward(g):
        g64 = g.astype(np.float64)
        dx = np.zeros((n, c, h, w), dtype=np.float64)
        for i in range(kh):
            for j in range(kw):
                dx[:, :, i:i + ho, j:j + wo] += kernel[i, j] * g64
        return (dx.astype(dtype),)

    return _emit((x,), out.astype(dtype), backward)


# ---------------------------------------------------------------------------
# normalization

class BatchNormState:
    """Running mean/variance for one batch-norm layer."""

    def __init__(self, channels: int):
        self.channels = channels
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)
        self.initialized = False


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
               mode: str = "train", epsilon: float = 1e-5, momentum: float = 0.9) -> Tensor:
    """Per-channel batch normalization over (N,H,W).

    Train mode normalizes with batch moments and updates running statistics by
    exponential moving average; eval mode uses the running statistics.
    """
    if epsilon <= 0:
        raise ConfigError("batch_norm epsilon must be > 0")
    if mode not in ("train", "eval"):
        raise ConfigError(f"batch_norm mode must be 'train' or 'eval', got {mode!r}")
    if x.data.ndim != 4:
        raise ShapeError(f"batch_norm expects 4-d input, got {x.shape}")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta must have shape ({c},)")

    x64 = x.data.astype(np.float64)
    g64 = gamma.data.astype(np.float64)
    dtype = _result_dtype(x, gamma, beta)
    needs = (x.requires_grad, gamma.requires_grad, beta.requires_grad)

    if mode == "train":
        mean = x64.mean(axis=(0, 2, 3))
        var = x64.var(axis=(0, 2, 3))
        inv = 1.0 / np.sqrt(var + epsilon)
        xhat = (x64 - mean[None, :, None, None]) * inv[None, :, None, None]
        state.running_mean = (momentum * state.running_mean.astype(np.float64)
                              + (1.0 - momentum) * mean).astype(np.float32)
        state.running_var = (momentum * state.running_var.astype(np.float64)
                             + (1.0 - momentum) * var).astype(np.float32)
        state.initialized = True
        out = g64[None, :, None, None] * xhat + beta.data.astype(np.float64)[None, :, None, None]
        m = n * h * w

        def backward(g):
            gg = g.astype(np.float64)
            dbeta = gg.sum(axis=(0, 2, 3))
            dgamma = (gg * xhat).sum(axis=(0, 2, 3))
            gx = gga = ggb = None
            if needs[0]:
                coeff = (g64 * inv / m)[None, :, None, None]
                gx = (coeff * (m * gg - dbeta[None, :, None, None]
                               - xhat * dgamma[None, :, None, None])).astype(dtype)
            if needs[1]:
                gga = dgamma.astype(dtype)
            if needs[2]:
                ggb = dbeta.astype(dtype)
            return gx, gga, ggb

    else:
        if not state.initialized:
            raise StateError("batch_norm eval mode requires populated running statistics")
        mean = state.running_mean.astype(np.float64)
        inv = 1.0 / np.sqrt(state.running_var.astype(np.float64) + epsilon)
        xhat = (x64 - mean[None, :, None, None]) * inv[None, :, None, None]
        out = g64[None, :, None, None] * xhat + beta.data.astype(np.float64)[None, :, None, None]

        def backward(g):
            gg = g.astype(np.float64)
            gx = gga = ggb = None
            if needs[0]:
                gx = (gg * (g64 * inv)[None, :, None, None]).astype(dtype)
            if needs[1]:
                gga = (gg * xhat).sum(axis=(0, 2, 3)).astype(dtype)
            if needs[2]:
                ggb = gg.sum(axis=(0, 2, 3)).astype(dtype)
            return gx, gga, ggb

    return _emit((x, gamma, beta), out.astype(dtype), backward)


# ---------------------------------------------------------------------------
# activations, pooling, resampling

def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def backward(g):
        return (g * (x.data > 0),)

    return _emit((x,), out, backward)


def maxpool2x2(x: Tensor) -> Tensor:
    """2x2 max pooling; gradient routes to the first maximum in row-major order."""
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2x2 expects 4-d input, got {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 requires even spatial size, got {h}x{w}")
    ho, wo = h // 2, w // 2
    windows = x.data.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        buf = np.zeros((n, c, ho, wo, 4), dtype=g.dtype)
        np.put_along_axis(buf, idx[..., None], g[..., None], axis=-1)
        dx = buf.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (dx,)

    return _emit((x,), out, backward)


def avgpool2x2(x: Tensor) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError(f"avgpool2x2 expects 4-d input, got {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avgpool2x2 requires even spatial size, got {h}x{w}")
    ho, wo = h // 2, w // 2
    out = x.data.reshape(n, c, ho, 2, wo, 2).mean(axis=(3, 5), dtype=np.float64)

    def backward(g):
        dx = np.broadcast_to((g * 0.25)[:, :, :, None, :, None],
                             (n, c, ho, 2, wo, 2)).reshape(n, c, h, w)
        return (dx.copy(),)

    return _emit((x,), out.astype(x.data.dtype), backward)


_UPSAMPLE_MATRICES: dict[int, np.ndarray] = {}


def _upsample_matrix(n: int) -> np.ndarray:
    # align-corners-false: output i samples input at (i + 0.5)/2 - 0.5, edge-clamped
    m = _UPSAMPLE_MATRICES.get(n)
    if m is None:
        m = np.zeros((2 * n, n), dtype=np.float64)
        for i in range(2 * n):
            s = min(max(i / 2.0 - 0.25, 0.0), n - 1.0)
            y0 = int(np.floor(s))
            t = s - y0
            y1 = min(y0 + 1, n - 1)
            m[i, y0] += 1.0 - t
            m[i, y1] += t
        _UPSAMPLE_MATRICES[n] = m
    return m


def bilinear_upsample2x(x: Tensor) -> Tensor:
    """Bilinear 2x upsampling with align-corners-false sampling, edge-clamped."""
    if x.data.ndim != 4:
        raise ShapeError(f"bilinear_upsample2x expects 4-d input, got {x.shape}")
    n, c, h, w = x.shape
    uh = _upsample_matrix(h)
    uw = _upsample_matrix(w)
    x64 = x.data.astype(np.float64)
    out = np.einsum("ih,nchw->nciw", uh, x64)
    out = np.einsum("jw,nciw->ncij", uw, out)
    dtype = x.data.dtype

    def backward(g):
        g64 = g.astype(np.float64)
        dx = np.einsum("jw,ncij->nciw", uw, g64)
        dx = np.einsum("ih,nciw->nchw", uh, dx)
        return (dx.astype(dtype),)

    return _emit((x,), out.astype(dtype), backward)


# ---------------------------------------------------------------------------
# structural / elementwise

def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise ShapeError("concat_channels expects 4-d inputs")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels N/H/W mismatch: {a.shape} vs {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    needs = (a.requires_grad, b.requires_grad)

    def backward(g):
        ga = g[:, :ca] if needs[0] else None
        gb = g[:, ca:] if needs[1] else None
        return ga, gb

    return _emit((a, b), out, backward)


def _binary(a, b, fwd, bwd_a, bwd_b, name):
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.shape != b.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise ShapeError(f"{name}: shape mismatch {a.shape} vs {b.shape}")
    out = fwd(a.data, b.data)
    needs = (a.requires_grad, b.requires_grad)

    def backward(g):
        ga = gb = None
        if needs[0]:
            ga = bwd_a(g, a.data, b.data)
            if a.data.ndim == 0:
                ga = np.asarray(ga.sum(), dtype=a.data.dtype)
        if needs[1]:
            gb = bwd_b(g, a.data, b.data)
            if b.data.ndim == 0:
                gb = np.asarray(gb.sum(), dtype=b.data.dtype)
        return ga, gb

    return _emit((a, b), out, backward)


def add(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x + y,
                   lambda g, x, y: g, lambda g, x, y: g, "add")


def sub(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x - y,
                   lambda g, x, y: g, lambda g, x, y: -g, "sub")


def mul(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x, "mul")


def div(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x / y,
                   lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y), "div")


def neg(a: Tensor) -> Tensor:
    out = -a.data

    def backward(g):
        return (-g,)

    return _emit((a,), out, backward)


def elementwise_abs(x: Tensor) -> Tensor:
    out = np.abs(x.data)

    def backward(g):
        return (g * np.sign(x.data),)

    return _emit((x,), out, backward)


def square(x: Tensor) -> Tensor:
    out = x.data * x.data

    def backward(g):
        return (g * (2.0 * x.data),)

    return _emit((x,), out, backward)


def pow_scalar(x: Tensor, exponent: float) -> Tensor:
    """Elementwise power for strictly positive tensors (fractional exponents)."""
    if np.any(x.data <= 0):
        raise ContractError("pow_scalar requires strictly positive input")
    out = np.power(x.data, exponent)

    def backward(g):
        return ((g * exponent * np.power(x.data, exponent - 1.0)).astype(x.data.dtype),)

    return _emit((x,), out, backward)


def clamp_min(x: Tensor, floor: float) -> Tensor:
    out = np.maximum(x.data, floor)

    def backward(g):
        return (g * (x.data >= floor),)

    return _emit((x,), out, backward)


def mean_reduce(x: Tensor) -> Tensor:
    """Mean over all elements; returns a rank-0 tensor."""
    out = np.asarray(x.data.mean(dtype=np.float64), dtype=x.data.dtype)
    scale = 1.0 / x.data.size

    def backward(g):
        return (np.full(x.shape, float(g) * scale, dtype=x.data.dtype),)

    return _emit((x,), out, backward)


# operator sugar on Tensor (kept here so tensor.py stays import-cycle free)
Tensor.__add__ = lambda self, other: add(self, other)
Tensor.__radd__ = lambda self, other: add(other, self)
Tensor.__sub__ = lambda self, other: sub(self, other)
Tensor.__rsub__ = lambda self, other: sub(other, self)
Tensor.__mul__ = lambda self, other: mul(self, other)
Tensor.__rmul__ = lambda self, other: mul(other, self)
Tensor.__truediv__ = lambda self, other: div(self, other)
Tensor.__rtruediv__ = lambda self, other: div(other, self)
Tensor.__neg__ = lambda self: neg(self)
