"""Differentiable kernels: convolutions, instance norm, activations, concat.

Convolutions run as strided-window views contracted with BLAS (tensordot);
backward passes reuse the same core, so conv2d and conv_transpose2d are exact
adjoints of each other.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import Parameter, Tensor, record_op

# ---------------------------------------------------------------------------
# Correlation core
# ---------------------------------------------------------------------------


def _pad2d(x: np.ndarray, p: int, extra_h: int = 0, extra_w: int = 0) -> np.ndarray:
    if p == 0 and extra_h == 0 and extra_w == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p + extra_h), (p, p + extra_w)))


def _windows(xp: np.ndarray, k: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    return as_strided(
        xp, (n, c, out_h, out_w, k, k), (sn, sc, sh * stride, sw * stride, sh, sw)
    )


def conv_out_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv_transpose_out_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size - 1) * stride - 2 * padding + k


def _corr(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """Cross-correlation: (N,C,H,W) x (O,C,k,k) -> (N,O,H',W')."""
    n, c, h, width = x.shape
    o, _, k, _ = w.shape
    out_h = conv_out_size(h, k, stride, padding)
    out_w = conv_out_size(width, k, stride, padding)
    v = _windows(_pad2d(x, padding), k, stride, out_h, out_w)
    y = np.tensordot(v, w, axes=([1, 4, 5], [1, 2, 3]))  # (N,H',W',O)
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2))


def _corr_input_grad(
    dy: np.ndarray, w: np.ndarray, stride: int, padding: int, in_hw: tuple[int, int]
) -> np.ndarray:
    """Adjoint of _corr with respect to its input; (N,O,H',W') -> (N,C,H,W)."""
    o, c, k, _ = w.shape
    n = dy.shape[0]
    h, width = in_hw
    if stride > 1:
        out_h, out_w = dy.shape[2:]
        dil = np.zeros((n, o, (out_h - 1) * stride + 1, (out_w - 1) * stride + 1), dy.dtype)
        dil[:, :, ::stride, ::stride] = dy
    else:
        dil = dy
    # rows/cols the forward pass never reached need trailing zeros
    extra_h = (h + 2 * padding - k) % stride
    extra_w = (width + 2 * padding - k) % stride
    pb = k - 1 - padding
    if pb < 0:
        raise ValueError("padding larger than kernel-1 is not supported")
    dyp = _pad2d(dil, pb, extra_h, extra_w)
    w_flip = w[:, :, ::-1, ::-1]
    v = _windows(dyp, k, 1, h, width)
    dx = np.tensordot(v, w_flip, axes=([1, 4, 5], [0, 2, 3]))  # (N,H,W,C)
    return np.ascontiguousarray(dx.transpose(0, 3, 1, 2))


def _corr_weight_grad(
    x: np.ndarray, dy: np.ndarray, stride: int, padding: int, k: int
) -> np.ndarray:
    """Adjoint of _corr with respect to the kernel; -> (O,C,k,k)."""
    out_h, out_w = dy.shape[2:]
    v = _windows(_pad2d(x, padding), k, stride, out_h, out_w)
    return np.tensordot(dy, v, axes=([0, 2, 3], [0, 2, 3]))  # (O,C,k,k)


# ---------------------------------------------------------------------------
# Tape ops
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, w: Parameter, b: Parameter | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Standard strided cross-correlation with optional bias."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError("conv2d expects NCHW input and OIkk weights")
    if x.data.shape[1] != w.data.shape[1]:
        raise ValueError(
            f"channel mismatch: input {x.data.shape[1]}, weight {w.data.shape[1]}"
        )
    y = _corr(x.data, w.data, stride, padding)
    if b is not None:
        y += b.data[None, :, None, None]
    out = Tensor(y, requires_grad=x.requires_grad or w.requires_grad
                 or (b is not None and b.requires_grad))
    in_hw = x.data.shape[2:]
    k = w.data.shape[2]

    def backward(dy):
        if x.requires_grad:
            x.accumulate(_corr_input_grad(dy, w.data, stride, padding, in_hw))
        if w.requires_grad:
            w.accumulate(_corr_weight_grad(x.data, dy, stride, padding, k))
        if b is not None and b.requires_grad:
            b.accumulate(dy.sum(axis=(0, 2, 3)))

    record_op(out, backward)
    return out


def conv_transpose2d(x: Tensor, w: Parameter, b: Parameter | None = None,
                     stride: int = 1, padding: int = 0) -> Tensor:
    """Adjoint of conv2d's forward map; weights are (C_in, C_out, k, k)."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError("conv_transpose2d expects NCHW input and IOkk weights")
    if x.data.shape[1] != w.data.shape[0]:
        raise ValueError(
            f"channel mismatch: input {x.data.shape[1]}, weight {w.data.shape[0]}"
        )
    k = w.data.shape[2]
    out_h = conv_transpose_out_size(x.data.shape[2], k, stride, padding)
    out_w = conv_transpose_out_size(x.data.shape[3], k, stride, padding)
    y = _corr_input_grad(x.data, w.data, stride, padding, (out_h, out_w))
    if b is not None:
        y += b.data[None, :, None, None]
    out = Tensor(y, requires_grad=x.requires_grad or w.requires_grad
                 or (b is not None and b.requires_grad))

    def backward(dy):
        if x.requires_grad:
            x.accumulate(_corr(dy, w.data, stride, padding))
        if w.requires_grad:
            # roles swap: the convolution direction runs output -> input
            w.accumulate(_corr_weight_grad(dy, x.data, stride, padding, k))
        if b is not None and b.requires_grad:
            b.accumulate(dy.sum(axis=(0, 2, 3)))

    record_op(out, backward)
    return out


def instance_norm(x: Tensor, scale: Parameter, shift: Parameter,
                  eps: float = 1e-5) -> Tensor:
    """Per-(sample, channel) spatial standardization followed by affine."""
    n, c, h, w = x.data.shape
    if h * w < 2:
        raise ValueError("instance_norm needs at least 2 spatial elements")
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    centered = x.data - mu
    var = (centered**2).mean(axis=(2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = centered * inv_std
    y = scale.data[None, :, None, None] * x_hat + shift.data[None, :, None, None]
    out = Tensor(y, requires_grad=x.requires_grad or scale.requires_grad
                 or shift.requires_grad)
    m = h * w

    def backward(dy):
        if scale.requires_grad:
            scale.accumulate((dy * x_hat).sum(axis=(0, 2, 3)))
        if shift.requires_grad:
            shift.accumulate(dy.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dxhat = dy * scale.data[None, :, None, None]
            mean_dxhat = dxhat.mean(axis=(2, 3), keepdims=True)
            mean_dxhat_xhat = (dxhat * x_hat).mean(axis=(2, 3), keepdims=True)
            x.accumulate(inv_std * (dxhat - mean_dxhat - x_hat * mean_dxhat_xhat))

    record_op(out, backward)
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0), requires_grad=x.requires_grad)

    def backward(dy):
        if x.requires_grad:
            x.accumulate(dy * (x.data > 0))

    record_op(out, backward)
    return out


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    out = Tensor(np.where(x.data > 0, x.data, slope * x.data),
                 requires_grad=x.requires_grad)

    def backward(dy):
        if x.requires_grad:
            x.accumulate(dy * np.where(x.data > 0, 1.0, slope).astype(dy.dtype))

    record_op(out, backward)
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y, requires_grad=x.requires_grad)

    def backward(dy):
        if x.requires_grad:
            x.accumulate(dy * (1.0 - y * y))

    record_op(out, backward)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = np.where(x.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(x.data))),
                 np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))))
    out = Tensor(y.astype(x.data.dtype), requires_grad=x.requires_grad)

    def backward(dy):
        if x.requires_grad:
            x.accumulate(dy * out.data * (1.0 - out.data))

    record_op(out, backward)
    return out


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel axis; gradients split back by slice."""
    if a.data.shape[0] != b.data.shape[0] or a.data.shape[2:] != b.data.shape[2:]:
        raise ValueError("concat_channels requires matching N, H, W")
    ca = a.data.shape[1]
    out = Tensor(np.concatenate([a.data, b.data], axis=1),
                 requires_grad=a.requires_grad or b.requires_grad)

    def backward(dy):
        if a.requires_grad:
            a.accumulate(dy[:, :ca])
        if b.requires_grad:
            b.accumulate(dy[:, ca:])

    record_op(out, backward)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError("add requires identical shapes")
    out = Tensor(a.data + b.data, requires_grad=a.requires_grad or b.requires_grad)

    def backward(dy):
        if a.requires_grad:
            a.accumulate(dy)
        if b.requires_grad:
            b.accumulate(dy)

    record_op(out, backward)
    return out
