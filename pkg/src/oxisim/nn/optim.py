"""Adam with bias correction over named parameter lists."""

from __future__ import annotations

import logging

import numpy as np

from .tensor import Parameter

log = logging.getLogger(__name__)


class AdamState:
    """First/second moment accumulators keyed by parameter name."""

    def __init__(self, params: list[Parameter]):
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in params}
        self.v = {p.name: np.zeros_like(p.data) for p in params}


def adam_step(params: list[Parameter], state: AdamState, lr: float = 2e-4,
              beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8) -> bool:
    """One update over all params; skips (and reports) on non-finite gradients.

    Parameters without an accumulated gradient are treated as zero-gradient.
    Returns False if the step was skipped.
    """
    grads = {}
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            log.warning("non-finite gradient in %s; optimizer step skipped", p.name)
            return False
        grads[p.name] = g
    state.t += 1
    t = state.t
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for p in params:
        g = grads[p.name]
        m = state.m[p.name]
        v = state.v[p.name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)
    return True
