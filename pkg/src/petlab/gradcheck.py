"""Finite-difference gradient checking for differentiable operations.

The analytic gradient of a random linear projection of the op's output is
compared against central finite differences, element by element. The numeric
side never touches the tape, so the two routes stay independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tape, Tensor
from .ops import mean_reduce, mul


@dataclass
class GradCheckReport:
    op_name: str
    tolerance: float
    max_rel_errors: list[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.max_rel_errors)

    def __str__(self):
        errs = ", ".join(f"{e:.3e}" for e in self.max_rel_errors)
        verdict = "PASS" if self.passed else "FAIL"
        return f"grad_check[{self.op_name}] {verdict} tol={self.tolerance:g} max_rel_err per input: [{errs}]"


def sample_standard(rng, shape):
    return rng.standard_normal(shape)


def sample_off_kink(rng, shape, margin=0.15):
    """Standard normals pushed away from zero (for kinked ops like relu/abs)."""
    d = rng.standard_normal(shape)
    return d + margin * np.where(d >= 0, 1.0, -1.0)


def sample_distinct(rng, shape, gap=0.01):
    """All-distinct values with pairwise gaps >> fd step (for argmax-style ops)."""
    n = int(np.prod(shape))
    return (rng.permutation(n).astype(np.float64) * gap).reshape(shape)


def grad_check(op, shapes, tolerance, seed=0, dtype=np.float32, step=None,
               samplers=None, name=None) -> GradCheckReport:
    """Check d(op)/d(input) for every input against central differences.

    op: callable taking len(shapes) Tensors and returning one Tensor.
    Inputs are seeded deterministically; the report lists the max relative
    error per input and fails if any exceeds ``tolerance``. The default step
    balances truncation against rounding noise for the graph dtype.
    """
    if step is None:
        step = 1e-3 if dtype == np.float32 else 1e-5
    rng = np.random.default_rng(seed)
    if samplers is None:
        samplers = [sample_standard] * len(shapes)
    datas = [np.asarray(s(rng, shape), dtype=np.float64)
             for s, shape in zip(samplers, shapes)]

    out_probe = op(*[Tensor(d, dtype=dtype) for d in datas])
    proj = rng.standard_normal(out_probe.shape)

    def scalar_loss(ds):
        out = op(*[Tensor(d, dtype=dtype) for d in ds])
        return float(np.mean(out.data.astype(np.float64) * proj))

    inputs = [Tensor(d, requires_grad=True, dtype=dtype) for d in datas]
    with Tape() as tape:
        out = op(*inputs)
        loss = mean_reduce(mul(out, Tensor(proj, dtype=dtype)))
        tape.backward(loss)

    report = GradCheckReport(op_name=name or getattr(op, "__name__", "op"), tolerance=tolerance)
    for k, inp in enumerate(inputs):
        ana = np.zeros(datas[k].shape) if inp.grad is None else inp.grad.astype(np.float64)
        num = np.zeros_like(datas[k])
        flat = num.reshape(-1)
        for i in range(flat.size):
            ds = [d.copy() for d in datas]
            ds[k].reshape(-1)[i] += step
            f_plus = scalar_loss(ds)
            ds[k].reshape(-1)[i] -= 2 * step
            f_minus = scalar_loss(ds)
            flat[i] = (f_plus - f_minus) / (2 * step)
        scale = max(np.abs(ana).max(initial=0.0), np.abs(num).max(initial=0.0), 1e-12)
        report.max_rel_errors.append(float(np.abs(ana - num).max(initial=0.0) / scale))
    return report
