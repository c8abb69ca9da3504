"""Differentiable primitives.

Each function takes :class:`Tensor` (or array-like) inputs and returns a new
Tensor whose backward closure maps the upstream gradient to one gradient per
parent, in parent order.
"""
from __future__ import annotations

from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import NumericError, ShapeError, Tensor, as_tensor, make_node, note_branch


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_node(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return make_node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return make_node(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = g / b.data
        return unbroadcast(ga, a.shape), unbroadcast(-ga * a.data / b.data, b.shape)

    return make_node(a.data / b.data, (a, b), backward, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_node(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        return (g * p * a.data ** (p - 1),)

    return make_node(a.data ** p, (a,), backward, "power")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    note_branch(np.packbits(mask).tobytes())
    return make_node(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return make_node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a) -> Tensor:
    """log(1 + exp(a)), stable for large |a|."""
    a = as_tensor(a)
    return make_node(np.logaddexp(0.0, a.data), (a,), lambda g: (g * _sigmoid(a.data),), "softplus")


# ---------------------------------------------------------------------------
# reductions and shape manipulation
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_node(a.data.sum(axis=axes, keepdims=keepdims), (a,), backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes]))

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return make_node(a.data.mean(axis=axes, keepdims=keepdims), (a,), backward, "mean")


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    return make_node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return make_node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def broadcast_to(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    out = np.broadcast_to(a.data, tuple(shape)).copy()
    return make_node(out, (a,), lambda g: (unbroadcast(g, a.shape),), "broadcast_to")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0]
    axis = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim:
            raise ShapeError(f"concat: rank {t.ndim} does not match rank {ref.ndim}")
        for ax in range(ref.ndim):
            if ax != axis and t.shape[ax] != ref.shape[ax]:
                raise ShapeError(f"concat: axis {ax} has size {t.shape[ax]}, expected {ref.shape[ax]}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        index = [slice(None)] * g.ndim
        grads = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            index[axis] = slice(lo, hi)
            grads.append(g[tuple(index)])
        return grads

    return make_node(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def take(a, indices, axis: int = 0) -> Tensor:
    """Gather entries of ``a`` at integer ``indices`` along ``axis``."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    axis = axis % a.ndim

    def backward(g):
        grad = np.zeros(a.shape)
        np.add.at(np.moveaxis(grad, axis, 0), idx, np.moveaxis(g, axis, 0))
        return (grad,)

    return make_node(np.take(a.data, idx, axis=axis), (a,), backward, "take")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul expects operands of rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: axis -1 of left ({a.shape[-1]}) != axis -2 of right ({b.shape[-2]})")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return make_node(a.data @ b.data, (a, b), backward, "matmul")


# ---------------------------------------------------------------------------
# neural-network primitives
# ---------------------------------------------------------------------------

def linear(x, weight, bias=None) -> Tensor:
    """Affine map over the last axis: ``x @ weight.T + bias``."""
    x, weight = as_tensor(x), as_tensor(weight)
    d_out, d_in = weight.shape
    if x.shape[-1] != d_in:
        raise ShapeError(f"linear: trailing axis of input has size {x.shape[-1]}, weight expects {d_in}")
    out = x.data @ weight.data.T
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        g2 = g.reshape(-1, d_out)
        grads = [g @ weight.data, g2.T @ x.data.reshape(-1, d_in)]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return make_node(out, parents, backward, "linear")


def softmax_lastdim(x) -> Tensor:
    x = as_tensor(x)
    if np.isnan(x.data).any():
        raise NumericError("softmax_lastdim received NaN input")
    z = np.exp(x.data - x.data.max(axis=-1, keepdims=True))
    out = z / z.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return make_node(out, (x,), backward, "softmax")


def log_softmax_lastdim(x) -> Tensor:
    x = as_tensor(x)
    if np.isnan(x.data).any():
        raise NumericError("log_softmax_lastdim received NaN input")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return make_node(out, (x,), backward, "log_softmax")


def _conv_out(size: int, k: int, stride: int, padding: int, axis: str) -> int:
    if k % 2 == 0:
        raise ShapeError(f"kernel size along {axis} must be odd, got {k}")
    if padding < 0 or stride < 1:
        raise ShapeError(f"invalid stride/padding ({stride}, {padding})")
    n = (size + 2 * padding - k) // stride + 1
    if n < 1:
        raise ShapeError(f"input {axis} ({size}) too small for kernel {k} with padding {padding}")
    return n


def _check_nchw(x: Tensor, name: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{name} expects a 4-D [N,C,H,W] input, got rank {x.ndim}")


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation. ``weight`` is [K, C, kh, kw]."""
    x, weight = as_tensor(x), as_tensor(weight)
    _check_nchw(x, "conv2d")
    n, c, h, w = x.shape
    k, wc, kh, kw = weight.shape
    if wc != c:
        raise ShapeError(f"conv2d: axis 1 (channels) of input is {c} but weight expects {wc}")
    ho = _conv_out(h, kh, stride, padding, "height")
    wo = _conv_out(w, kw, stride, padding, "width")
    p = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    out = np.tensordot(win, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[None, :, None, None]
        parents.append(bias)

    def backward(g):
        gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        cols = np.tensordot(g, weight.data, axes=([1], [0]))  # N,Ho,Wo,C,kh,kw
        gxp = np.zeros(xp.shape)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                    cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, p:p + h, p:p + w] if p else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return make_node(np.ascontiguousarray(out), parents, backward, "conv2d")


def depthwise_conv2d(x, weight, stride: int = 1, padding: int = 0) -> Tensor:
    """Per-channel cross-correlation. ``weight`` is [C, 1, kh, kw]."""
    x, weight = as_tensor(x), as_tensor(weight)
    _check_nchw(x, "depthwise_conv2d")
    n, c, h, w = x.shape
    if weight.ndim != 4 or weight.shape[0] != c or weight.shape[1] != 1:
        raise ShapeError(f"depthwise_conv2d: weight shape {weight.shape} incompatible with {c} input channels "
                         "(axis 0 must equal C, axis 1 must be 1)")
    kh, kw = weight.shape[2:]
    ho = _conv_out(h, kh, stride, padding, "height")
    wo = _conv_out(w, kw, stride, padding, "width")
    p = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    wk = weight.data[:, 0]
    out = np.zeros((n, c, ho, wo))
    for i in range(kh):
        for j in range(kw):
            out += xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] * wk[None, :, i, j, None, None]

    def backward(g):
        gxp = np.zeros(xp.shape)
        gw = np.zeros(weight.shape)
        for i in range(kh):
            for j in range(kw):
                sl = (slice(None), slice(None), slice(i, i + stride * ho, stride), slice(j, j + stride * wo, stride))
                gw[:, 0, i, j] = (g * xp[sl]).sum(axis=(0, 2, 3))
                gxp[sl] += g * wk[None, :, i, j, None, None]
        gx = gxp[:, :, p:p + h, p:p + w] if p else gxp
        return gx, gw

    return make_node(out, (x, weight), backward, "depthwise_conv2d")


@lru_cache(maxsize=64)
def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """[n_out, n_in] interpolation matrix, half-pixel centres (align_corners=False).

    Source coordinates below zero clamp to the first sample; the upper
    neighbour clamps to the last sample.
    """
    scale = n_in / n_out
    m = np.zeros((n_out, n_in))
    for o in range(n_out):
        src = max((o + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0 if i0 < n_in - 1 else 0.0
        m[o, i0] += 1.0 - lam
        m[o, i1] += lam
    m.setflags(write=False)
    return m


def bilinear_upsample2x(x) -> Tensor:
    x = as_tensor(x)
    _check_nchw(x, "bilinear_upsample2x")
    h, w = x.shape[2:]
    uh, uw = bilinear_matrix(h, 2 * h), bilinear_matrix(w, 2 * w)
    out = uh @ x.data @ uw.T

    def backward(g):
        return (uh.T @ g @ uw,)

    return make_node(out, (x,), backward, "bilinear_upsample2x")


def batchnorm2d(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
                training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Batch normalization over (N, H, W) per channel.

    In training mode the running statistics are updated in place (unbiased
    variance, as is customary); in eval mode they are used as-is.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    _check_nchw(x, "batchnorm2d")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm2d: affine parameters must have shape ({c},)")
    axes = (0, 2, 3)
    gm = gamma.data[None, :, None, None]
    if training:
        m = x.shape[0] * x.shape[2] * x.shape[3]
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * (var * m / (m - 1) if m > 1 else var)
    else:
        mu, var = running_mean.copy(), running_var.copy()
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * inv_std[None, :, None, None]
    out = gm * xhat + beta.data[None, :, None, None]

    def backward(g):
        gbeta = g.sum(axis=axes)
        ggamma = (g * xhat).sum(axis=axes)
        dxhat = g * gm
        if training:
            mcount = x.shape[0] * x.shape[2] * x.shape[3]
            gx = (inv_std[None, :, None, None] / mcount) * (
                mcount * dxhat
                - dxhat.sum(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))
        else:
            gx = dxhat * inv_std[None, :, None, None]
        return gx, ggamma, gbeta

    return make_node(out, (x, gamma, beta), backward, "batchnorm2d")


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = gamma.data * xhat + beta.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        dxhat = g * gamma.data
        gx = (inv_std / d) * (d * dxhat - dxhat.sum(axis=-1, keepdims=True)
                              - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make_node(out, (x, gamma, beta), backward, "layer_norm")
