"""Parameter initializers and the residual block used by both networks."""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Parameter, Tensor

WEIGHT_SIGMA = 0.02


def conv_params(rng: np.random.Generator, name: str, c_out: int, c_in: int, k: int,
                dtype=np.float32, transpose: bool = False) -> tuple[Parameter, Parameter]:
    """Gaussian(0, 0.02) kernel and zero bias; transpose kernels are (C_in, C_out, k, k)."""
    shape = (c_in, c_out, k, k) if transpose else (c_out, c_in, k, k)
    w = Parameter(rng.normal(0.0, WEIGHT_SIGMA, size=shape).astype(dtype),
                  name=f"{name}.w", init=f"normal(0,{WEIGHT_SIGMA})")
    b = Parameter(np.zeros(c_out, dtype=dtype), name=f"{name}.b", init="zeros")
    return w, b


def norm_params(name: str, channels: int, dtype=np.float32) -> tuple[Parameter, Parameter]:
    scale = Parameter(np.ones(channels, dtype=dtype), name=f"{name}.scale", init="ones")
    shift = Parameter(np.zeros(channels, dtype=dtype), name=f"{name}.shift", init="zeros")
    return scale, shift


class ResidualBlock:
    """x + F(x) with F = conv3x3 -> instance_norm -> relu -> conv3x3 -> instance_norm."""

    def __init__(self, rng: np.random.Generator, name: str, channels: int,
                 dtype=np.float32):
        self.w1, self.b1 = conv_params(rng, f"{name}.conv1", channels, channels, 3, dtype)
        self.s1, self.h1 = norm_params(f"{name}.norm1", channels, dtype)
        self.w2, self.b2 = conv_params(rng, f"{name}.conv2", channels, channels, 3, dtype)
        self.s2, self.h2 = norm_params(f"{name}.norm2", channels, dtype)

    def parameters(self) -> list[Parameter]:
        return [self.w1, self.b1, self.s1, self.h1, self.w2, self.b2, self.s2, self.h2]

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.shape[1] != self.w1.data.shape[1]:
            raise ValueError("residual block channel mismatch")
        f = ops.conv2d(x, self.w1, self.b1, stride=1, padding=1)
        f = ops.instance_norm(f, self.s1, self.h1)
        f = ops.relu(f)
        f = ops.conv2d(f, self.w2, self.b2, stride=1, padding=1)
        f = ops.instance_norm(f, self.s2, self.h2)
        return ops.add(x, f)
