"""Central finite-difference verification of tape gradients (64-bit)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tape, Tensor


@dataclass
class GradCheckResult:
    name: str
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def numeric_gradient(fn, x: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Central differences of a scalar-valued fn over every element of x."""
    x = x.astype(np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(fn(x))
        flat[i] = orig - eps
        lo = float(fn(x))
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def grad_check(name: str, loss_fn, inputs: list[Tensor], tolerance: float = 1e-4,
               eps: float = 1e-4) -> GradCheckResult:
    """Compare tape gradients of loss_fn(inputs...) with central differences.

    ``loss_fn`` must build its graph from exactly the given tensors and return
    a scalar Tensor. Inputs must be float64 for the stated tolerances to hold.
    The error metric is max |analytic - numeric| / (1 + max(|analytic|, |numeric|))
    per element, which behaves like a relative error away from zero and an
    absolute one near it.
    """
    for t in inputs:
        t.zero_grad()
    with Tape() as tape:
        loss = loss_fn(*inputs)
    tape.backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in inputs]

    worst = 0.0
    for idx, t in enumerate(inputs):
        base = t.data

        def scalar_fn(x, _idx=idx, _t=t):
            saved = _t.data
            _t.data = x
            value = float(loss_fn(*inputs).data)
            _t.data = saved
            return value

        numeric = numeric_gradient(scalar_fn, base.copy(), eps)
        t.data = base
        denom = 1.0 + np.maximum(np.abs(analytic[idx]), np.abs(numeric))
        worst = max(worst, float(np.max(np.abs(analytic[idx] - numeric) / denom)))
    return GradCheckResult(name=name, max_error=worst, tolerance=tolerance)
