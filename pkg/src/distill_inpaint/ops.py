"""Differentiable operations on :class:`~distill_inpaint.tensor.Tensor`.

Feature maps are ``C x H x W`` or batched ``N x C x H x W``. Elementwise
binary ops require identical shapes; there is no implicit broadcasting.
"""
from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, make_result


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return make_result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)
    return make_result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mul", a, b)
    return make_result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scalar_mul(a, s: float) -> Tensor:
    a = as_tensor(a)
    s = a.dtype.type(s)
    return make_result(a.data * s, (a,), lambda g: (g * s,), "scalar_mul")


def sum(a) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    return make_result(np.asarray(a.data.sum()), (a,), lambda g: (np.full_like(a.data, g),), "sum")


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    return make_result(np.asarray(a.data.mean()), (a,), lambda g: (np.full_like(a.data, g / n),), "mean")


def abs(a) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    # subgradient 0 at 0
    return make_result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(data, tensors, bw, "concat")


def elu(x) -> Tensor:
    x = as_tensor(x)
    neg = np.exp(np.minimum(x.data, 0)) - 1
    y = np.where(x.data > 0, x.data, neg)
    return make_result(y, (x,), lambda g: (g * np.where(x.data > 0, 1.0, neg + 1).astype(g.dtype),), "elu")


def softplus(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    y = np.log1p(np.exp(-np.abs(d))) + np.maximum(d, 0)

    def bw(g):
        return (g / (1 + np.exp(-d)),)

    return make_result(y, (x,), bw, "softplus")


def linear(x, weight, bias) -> Tensor:
    """``y = W x + b`` for ``x`` of shape ``[in]`` or ``[N, in]``."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1] or bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: x {x.shape}, weight {weight.shape}, bias {bias.shape}")
    y = x.data @ weight.data.T + bias.data

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = x.data.reshape(-1, x.shape[-1])
        return (g @ weight.data, g2.T @ x2, g2.sum(0))

    return make_result(y, (x, weight, bias), bw, "linear")


def softmax(x) -> Tensor:
    """Softmax over the last axis."""
    x = as_tensor(x)
    # normalise in float64 so the float32 result sums to 1 up to one rounding
    xd = x.data.astype(np.float64)
    z = np.exp(xd - xd.max(axis=-1, keepdims=True))
    s = (z / z.sum(axis=-1, keepdims=True)).astype(x.dtype)

    def bw(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return make_result(s, (x,), bw, "softmax")


def global_avg_pool(x) -> Tensor:
    """``[C,H,W] -> [C]`` (or ``[N,C,H,W] -> [N,C]``)."""
    x = as_tensor(x)
    if x.ndim not in (3, 4):
        raise ShapeError(f"global_avg_pool expects a 3- or 4-d feature map, got {x.shape}")
    hw = x.shape[-1] * x.shape[-2]
    y = x.data.mean(axis=(-2, -1))
    return make_result(y, (x,), lambda g: (np.broadcast_to(g[..., None, None] / hw, x.shape).copy(),), "global_avg_pool")


def _batched(x: Tensor):
    if x.ndim == 3:
        return x.data[None], True
    if x.ndim == 4:
        return x.data, False
    raise ShapeError(f"expected a C x H x W or N x C x H x W tensor, got {x.shape}")


def conv2d(x, weight, bias, stride: int = 1, padding: int = 0) -> Tensor:
    """Zero-padded cross-correlation, computed as im2col followed by one matmul."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    xd, unbatched = _batched(x)
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"conv2d: weight must be Cout x Cin x K x K, got {weight.shape}")
    cout, cin, k, _ = weight.shape
    if xd.shape[1] != cin:
        raise ShapeError(f"conv2d: input {x.shape} has {xd.shape[1]} channels, weight {weight.shape} expects {cin}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match {cout} output channels")
    if k % 2 == 0:
        raise ValueError(f"conv2d: kernel size must be odd, got {k}")
    if padding < 0 or stride < 1:
        raise ValueError(f"conv2d: invalid stride {stride} / padding {padding}")
    n, _, h, w = xd.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: input {x.shape} too small for kernel {k}, padding {padding}")

    # im2col in channels-last layout: one contiguous slice copy per kernel tap
    xl = xd.transpose(0, 2, 3, 1)
    xp = np.pad(xl, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    cols = np.empty((n, ho, wo, k, k, cin), dtype=xd.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :]
    cols = cols.reshape(n * ho * wo, k * k * cin)
    w2 = weight.data.transpose(0, 2, 3, 1).reshape(cout, k * k * cin)
    y = (cols @ w2.T + bias.data).reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    y = np.ascontiguousarray(y[0] if unbatched else y)

    def bw(g):
        g4 = g[None] if unbatched else g
        g2 = np.ascontiguousarray(g4.transpose(0, 2, 3, 1)).reshape(-1, cout)
        gw = np.ascontiguousarray((g2.T @ cols).reshape(cout, k, k, cin).transpose(0, 3, 1, 2))
        gb = g2.sum(axis=0)
        gx = None
        if x.requires_grad:
            gcols = (g2 @ w2).reshape(n, ho, wo, k, k, cin)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += gcols[:, :, :, i, j, :]
            gx = gxp[:, padding:padding + h, padding:padding + w, :].transpose(0, 3, 1, 2)
            gx = np.ascontiguousarray(gx[0] if unbatched else gx)
        return gx, gw, gb

    return make_result(y, (x, weight, bias), bw, "conv2d")


def upsample_nearest(x, factor: int) -> Tensor:
    x = as_tensor(x)
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    if x.ndim < 2:
        raise ShapeError(f"upsample_nearest expects spatial dims, got {x.shape}")
    y = np.repeat(np.repeat(x.data, factor, axis=-2), factor, axis=-1)
    lead = x.shape[:-2]
    h, w = x.shape[-2:]

    def bw(g):
        return (g.reshape(*lead, h, factor, w, factor).sum(axis=(-3, -1)),)

    return make_result(y, (x,), bw, "upsample_nearest")


def masked_sq_norm(d, m) -> Tensor:
    """Per-channel squared norm of ``d`` restricted to mask pixels.

    ``d`` is ``[C,H,W]`` (or ``[N,C,H,W]``), ``m`` is ``[1,H,W]`` (or
    ``[N,1,H,W]``); result is ``[C]`` (or ``[N,C]``) with
    ``result[c] = sum_hw m[hw] * d[c,hw]**2``. The mask is a constant.
    """
    d = as_tensor(d)
    md = m.data if isinstance(m, Tensor) else np.asarray(m)
    if d.ndim not in (3, 4) or md.ndim != d.ndim or md.shape[-3] != 1 or md.shape[-2:] != d.shape[-2:] \
            or md.shape[:-3] != d.shape[:-3]:
        raise ShapeError(f"masked_sq_norm: feature {d.shape} and mask {md.shape} are incompatible")
    md = md.astype(d.dtype, copy=False)
    y = (d.data * d.data * md).sum(axis=(-2, -1))

    def bw(g):
        return (2.0 * d.data * md * g[..., None, None],)

    return make_result(y, (d,), bw, "masked_sq_norm")


def expand_mask(m, channels: int, dtype=np.float32) -> Tensor:
    """Broadcast a ``[.., 1, H, W]`` mask over ``channels`` as a constant tensor."""
    md = m.data if isinstance(m, Tensor) else np.asarray(m)
    shape = md.shape[:-3] + (channels,) + md.shape[-2:]
    return Tensor(np.broadcast_to(md.astype(dtype, copy=False), shape))
