"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap numpy arrays (float32 by default, float64 for high-precision
gradient checking). Operations defined in :mod:`petlab.ops` record nodes onto
the innermost active :class:`Tape`; ``Tape.backward`` replays the tape in
reverse, accumulating gradients into ``Tensor.grad``.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, ShapeError

_TAPE_STACK: list["Tape"] = []


def active_tape():
    """Innermost active tape, or None when no tape is recording."""
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """N-dimensional float array with an optional gradient slot.

    ``grad`` is None until a backward pass touches this tensor.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        if dtype is None:
            # numpy scalars carry .dtype too; anything non-float defaults to f32
            got = getattr(data, "dtype", None)
            dtype = got if got in (np.float32, np.float64) else np.float32
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.ndim != 0:
            raise ContractError(f"item() requires a rank-0 tensor, got shape {self.shape}")
        return float(self.data)

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def backward(self, accumulate=False):
        tape = active_tape()
        if tape is None:
            raise ContractError("backward() requires an active Tape")
        tape.backward(self, accumulate=accumulate)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # arithmetic operators are attached by petlab.ops to avoid an import cycle


class TapeNode:
    """One recorded operation: inputs, output, and its backward rule."""

    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = tuple(inputs)
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of operations, in execution (hence topological) order.

    Use as a context manager around the forward pass::

        with Tape() as tape:
            loss = ...
        tape.backward(loss)

    A tape and its tensors are confined to a single thread.
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape stack corrupted"
        return False

    def record(self, inputs, output, backward_fn):
        self.nodes.append(TapeNode(inputs, output, backward_fn))

    def backward(self, loss, accumulate=False):
        """Populate ``grad`` on every requires_grad tensor reachable from loss.

        With ``accumulate=False`` (default) all leaf gradients touched by this
        tape are reset first, so repeated calls yield identical gradients;
        pass ``accumulate=True`` to sum across calls instead.
        """
        if not isinstance(loss, Tensor):
            raise ContractError("backward() expects a Tensor loss")
        if loss.data.ndim != 0:
            raise ContractError(f"backward() requires a rank-0 loss, got shape {loss.shape}")
        produced = {id(n.output) for n in self.nodes}
        if id(loss) not in produced:
            raise ContractError("loss was not produced by operations recorded on this tape")

        # intermediates always restart from zero; leaves only when not accumulating
        for node in self.nodes:
            node.output.grad = None
            if not accumulate:
                for inp in node.inputs:
                    if id(inp) not in produced:
                        inp.grad = None

        loss.grad = np.asarray(1.0, dtype=loss.data.dtype)
        for node in reversed(self.nodes):
            out_grad = node.output.grad
            if out_grad is None:
                continue
            in_grads = node.backward_fn(out_grad)
            for inp, g in zip(node.inputs, in_grads):
                if g is None:
                    continue
                if g.shape != inp.data.shape:
                    raise ShapeError(
                        f"backward rule produced gradient of shape {g.shape} "
                        f"for input of shape {inp.data.shape}")
                if inp.grad is None:
                    inp.grad = g.astype(inp.data.dtype, copy=True)
                else:
                    inp.grad = inp.grad + g.astype(inp.data.dtype, copy=False)


class Parameter:
    """Named trainable tensor, e.g. ``enc0.conv1.weight``."""

    __slots__ = ("name", "tensor")

    def __init__(self, name: str, tensor: Tensor):
        tensor.requires_grad = True
        self.name = name
        self.tensor = tensor

    @property
    def data(self):
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={tuple(self.tensor.shape)})"


def zero_grads(tensors):
    """Explicit gradient reset; accumulation across backward calls is opt-in."""
    for t in tensors:
        tt = t.tensor if isinstance(t, Parameter) else t
        tt.grad = None
