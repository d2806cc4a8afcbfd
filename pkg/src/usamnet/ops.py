"""Differentiable operators.

Every operator takes and returns :class:`~usamnet.tensor.Tensor` objects and
computes in the dtype of its inputs, so a graph built from 64-bit tensors stays
64-bit end to end.  Convolutions use cross-correlation (no kernel flip) and the
PyTorch weight layouts: ``(Cout, Cin, Kh, Kw)`` for :func:`conv2d` and
``(Cin, Cout, Kh, Kw)`` for :func:`conv_transpose2d`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, DegenerateBatchError
from .tensor import Tensor


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0
    output_padding_h: int = 0
    output_padding_w: int = 0

    def __post_init__(self):
        for field in ("in_channels", "out_channels", "kernel_h", "kernel_w", "stride"):
            if getattr(self, field) < 1:
                raise ConfigurationError(f"{field} must be positive, got {getattr(self, field)}")
        for field in ("padding", "output_padding_h", "output_padding_w"):
            if getattr(self, field) < 0:
                raise ConfigurationError(f"{field} must be non-negative, got {getattr(self, field)}")

    def conv_output_hw(self, h: int, w: int) -> tuple:
        return (
            (h + 2 * self.padding - self.kernel_h) // self.stride + 1,
            (w + 2 * self.padding - self.kernel_w) // self.stride + 1,
        )

    def transposed_output_hw(self, h: int, w: int) -> tuple:
        return (
            (h - 1) * self.stride - 2 * self.padding + self.kernel_h + self.output_padding_h,
            (w - 1) * self.stride - 2 * self.padding + self.kernel_w + self.output_padding_w,
        )


def _check_rank(x: Tensor, rank: int, what: str) -> None:
    if x.data.ndim != rank:
        raise ConfigurationError(f"{what} must have rank {rank}, got shape {x.shape}")


def _check_conv_args(x: Tensor, spec: ConvSpec, weight: Tensor, bias: Optional[Tensor], transposed: bool) -> None:
    _check_rank(x, 4, "input")
    if transposed:
        expected = (spec.in_channels, spec.out_channels, spec.kernel_h, spec.kernel_w)
    else:
        expected = (spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w)
    if weight.shape != expected:
        names = ("in_channels", "out_channels") if transposed else ("out_channels", "in_channels")
        names += ("kernel_h", "kernel_w")
        bad = [n for n, a, e in zip(names, weight.shape, expected) if a != e] if weight.data.ndim == 4 else ["rank"]
        raise ConfigurationError(f"weight shape {weight.shape} does not match spec {expected} (mismatch in {', '.join(bad)})")
    if x.shape[1] != spec.in_channels:
        raise ConfigurationError(f"input channel dimension is {x.shape[1]}, spec expects in_channels={spec.in_channels}")
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ConfigurationError(f"bias shape {bias.shape} does not match out_channels={spec.out_channels}")


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Padded (B,C,Hp,Wp) -> (B*Ho*Wo, C*kh*kw) patch matrix."""
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
    b, c = xp.shape[:2]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b * ho * wo, c * kh * kw)


def _col2im(cols: np.ndarray, shape: tuple, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Scatter-add (B*Ho*Wo, C*kh*kw) patches back into a zero canvas of ``shape`` (B,C,Hp,Wp)."""
    b, c = shape[:2]
    out = np.zeros(shape, dtype=cols.dtype)
    patches = cols.reshape(b, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += patches[:, :, i, j]
    return out


def conv2d(x: Tensor, spec: ConvSpec, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """2-D cross-correlation over a (B, Cin, H, W) batch."""
    _check_conv_args(x, spec, weight, bias, transposed=False)
    b, cin, h, w = x.shape
    p, s, kh, kw = spec.padding, spec.stride, spec.kernel_h, spec.kernel_w
    if h + 2 * p < kh or w + 2 * p < kw:
        raise ConfigurationError(f"padded input {h + 2 * p}x{w + 2 * p} smaller than kernel {kh}x{kw}")
    ho, wo = spec.conv_output_hw(h, w)
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    cols = _im2col(xp, kh, kw, s, ho, wo)
    wmat = weight.data.reshape(spec.out_channels, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(b, ho, wo, spec.out_channels).transpose(0, 3, 1, 2)

    def backward_fn(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, spec.out_channels)
        gx = gw = gb = None
        if x.requires_grad:
            gxp = _col2im(g2 @ wmat, xp.shape, kh, kw, s, ho, wo)
            gx = gxp[:, :, p : p + h, p : p + w] if p else gxp
        if weight.requires_grad:
            gw = (g2.T @ cols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=0)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, backward_fn)


def conv_transpose2d(x: Tensor, spec: ConvSpec, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Transposed convolution: the adjoint of :func:`conv2d` with the same spec, plus bias."""
    _check_conv_args(x, spec, weight, bias, transposed=True)
    if spec.output_padding_h >= spec.stride or spec.output_padding_w >= spec.stride:
        raise ConfigurationError(
            f"output_padding ({spec.output_padding_h}, {spec.output_padding_w}) must be smaller than stride {spec.stride}"
        )
    b, cin, h, w = x.shape
    p, s, kh, kw = spec.padding, spec.stride, spec.kernel_h, spec.kernel_w
    cout = spec.out_channels
    ho, wo = spec.transposed_output_hw(h, w)
    if ho < 1 or wo < 1:
        raise ConfigurationError(f"transposed convolution output would be {ho}x{wo}")
    # canvas coordinate = output coordinate + padding
    ch = max((h - 1) * s + kh, ho + p)
    cw = max((w - 1) * s + kw, wo + p)
    xmat = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(-1, cin)
    wmat = weight.data.reshape(cin, -1)
    canvas = _col2im(xmat @ wmat, (b, cout, ch, cw), kh, kw, s, h, w)
    out = canvas[:, :, p : p + ho, p : p + wo]
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)

    def backward_fn(g):
        gcanvas = np.zeros((b, cout, ch, cw), dtype=g.dtype)
        gcanvas[:, :, p : p + ho, p : p + wo] = g
        gcols = _im2col(gcanvas, kh, kw, s, h, w)
        gx = gw = gb = None
        if x.requires_grad:
            gx = (gcols @ wmat.T).reshape(b, h, w, cin).transpose(0, 3, 1, 2)
        if weight.requires_grad:
            gw = (xmat.T @ gcols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, backward_fn)


def batch_norm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization.

    In training mode the batch statistics normalize the input and the running
    buffers are updated in place (``running = (1 - momentum) * running +
    momentum * batch``, with the unbiased variance).  In eval mode the running
    buffers are used and left untouched.
    """
    _check_rank(x, 4, "batch_norm2d input")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ConfigurationError(f"gamma/beta must have shape ({c},), got {gamma.shape} and {beta.shape}")
    shape = (1, c, 1, 1)
    if training:
        n = x.shape[0] * x.shape[2] * x.shape[3]
        if n < 2:
            raise DegenerateBatchError(f"batch_norm2d in train mode needs B*H*W >= 2 per channel, got {n}")
        mean = x.data.mean(axis=(0, 2, 3))
        centered = x.data - mean.reshape(shape)
        var = (centered * centered).mean(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * (n / (n - 1))
        invstd = 1.0 / np.sqrt(var + eps)
        xhat = centered * invstd.reshape(shape)
    else:
        invstd = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype)
        xhat = (x.data - running_mean.astype(x.dtype).reshape(shape)) * invstd.reshape(shape)
    out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

    def backward_fn(g):
        gx = None
        ggamma = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        gbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        if x.requires_grad:
            scale = (gamma.data * invstd).reshape(shape)
            if training:
                gmean = g.mean(axis=(0, 2, 3)).reshape(shape)
                gxhat_mean = (g * xhat).mean(axis=(0, 2, 3)).reshape(shape)
                gx = scale * (g - gmean - xhat * gxhat_mean)
            else:
                gx = scale * g
        return gx, ggamma, gbeta

    return Tensor._from_op(out.astype(x.dtype, copy=False), (x, gamma, beta), backward_fn)


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    """x for x >= 0, slope*x below; the derivative at exactly 0 is taken as ``slope``."""
    factor = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    out = x.data * factor

    def backward_fn(g):
        return (g * factor,)

    return Tensor._from_op(out, (x,), backward_fn)


def sigmoid_scale(x: Tensor, scale: float = 255.0) -> Tensor:
    """``scale * sigmoid(x)``, clipped so that every value stays strictly inside (0, scale)."""
    z = x.data
    sig = np.empty_like(z)
    pos = z >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    sig[~pos] = ez / (1.0 + ez)
    dtype = z.dtype.type
    upper = np.nextafter(dtype(scale), dtype(0))
    out = np.clip(dtype(scale) * sig, np.finfo(z.dtype).tiny, upper)

    def backward_fn(g):
        return (g * dtype(scale) * sig * (1.0 - sig),)

    return Tensor._from_op(out, (x,), backward_fn)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis``."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(out, (x,), backward_fn)


def batched_matmul(a: Tensor, b: Tensor) -> Tensor:
    """(B, M, K) @ (B, K, N) -> (B, M, N)."""
    _check_rank(a, 3, "batched_matmul lhs")
    _check_rank(b, 3, "batched_matmul rhs")
    if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ConfigurationError(f"batched_matmul shapes {a.shape} and {b.shape} are incompatible")
    out = np.matmul(a.data, b.data)

    def backward_fn(g):
        ga = np.matmul(g, b.data.transpose(0, 2, 1)) if a.requires_grad else None
        gb = np.matmul(a.data.transpose(0, 2, 1), g) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(out, (a, b), backward_fn)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ConfigurationError(f"{op} needs identical shapes, got {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return Tensor._from_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return Tensor._from_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return Tensor._from_op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def sum_all(x: Tensor) -> Tensor:
    return Tensor._from_op(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    return Tensor._from_op(np.asarray(x.data.mean()), (x,), lambda g: (np.full(x.shape, g / n, dtype=x.dtype),))


def reshape(x: Tensor, shape: tuple) -> Tensor:
    return Tensor._from_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: tuple) -> Tensor:
    inverse = tuple(np.argsort(axes))
    return Tensor._from_op(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))
