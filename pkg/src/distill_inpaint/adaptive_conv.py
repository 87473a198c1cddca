"""Adaptive convolution with per-pixel kernels and fractional offsets.

For every output pixel ``j`` and output channel ``c``::

    y[c, j] = sum_k V[k, j] * sum_ci W[c, ci, k] * x[ci, j + p_k + offset_k(j)]

where ``p_k`` runs over the dilation-1 ``K x K`` neighbourhood (row major) and
``offset_k(j) = (offsets[2k, j], offsets[2k+1, j])`` is a ``(dy, dx)`` pair.
``V`` and the offsets are shared by all channels. Fractional positions are
read with bilinear interpolation; anything outside the frame reads as zero.
"""
from __future__ import annotations

import numpy as np
from scipy import sparse

from . import ops
from .nn import Conv2d, Module, he_normal
from .tensor import ShapeError, Tensor, as_tensor, make_result, parameter

# softplus(UNIT_KERNEL_LOGIT) == 1, so a zeroed generator yields V == 1
UNIT_KERNEL_LOGIT = float(np.log(np.e - 1.0))


class _Bilinear:
    """Bilinear reads of a channels-last grid ``[N*H*W, C]`` at ``[N, Q]`` positions.

    Samples are produced as rows ``[N*Q, C]``; positions are shared by all
    channels, so the adjoint is a single sparse ``B.T @ g`` product.
    """

    def __init__(self, h: int, w: int, py: np.ndarray, px: np.ndarray):
        n, q = py.shape
        self.shape = (n, h, w)
        y0 = np.floor(py)
        x0 = np.floor(px)
        self.wy = (py - y0).reshape(-1, 1)
        self.wx = (px - x0).reshape(-1, 1)
        y0 = y0.astype(np.int64)
        x0 = x0.astype(np.int64)
        base = (np.arange(n, dtype=np.int64) * (h * w))[:, None]
        self.idx, self.valid = [], []
        for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
            yy, xx = y0 + dy, x0 + dx
            valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            self.idx.append((base + np.clip(yy, 0, h - 1) * w + np.clip(xx, 0, w - 1)).reshape(-1))
            self.valid.append(valid.reshape(-1, 1))

    def weights(self):
        wy, wx = self.wy, self.wx
        return ((1 - wy) * (1 - wx), (1 - wy) * wx, wy * (1 - wx), wy * wx)

    def gather(self, rows: np.ndarray):
        """Sample ``rows [N*H*W, C]``; returns ``[N*Q, C]`` and the four masked corner reads."""
        reads = [rows[idx] * valid for idx, valid in zip(self.idx, self.valid)]
        out = reads[0] * self.weights()[0]
        for wk, r in zip(self.weights()[1:], reads[1:]):
            out += wk * r
        return out, reads

    def grad_rows(self, g: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`gather`: ``B.T @ g`` for ``g [N*Q, C]``."""
        n, h, w = self.shape
        nq = g.shape[0]
        data = np.concatenate([wk * v for wk, v in zip(self.weights(), self.valid)], axis=1).reshape(-1)
        cols = np.stack(self.idx, axis=1).reshape(-1)
        b = sparse.csr_matrix((data, cols, np.arange(0, 4 * nq + 1, 4)), shape=(nq, n * h * w))
        return np.asarray(b.T @ g, dtype=g.dtype)

    def grad_pos(self, g: np.ndarray, reads) -> tuple[np.ndarray, np.ndarray]:
        """Gradients w.r.t. the sample positions, summed over channels: two ``[N*Q]`` arrays."""
        r00, r01, r10, r11 = reads
        wy, wx = self.wy, self.wx
        dpy = (1 - wx) * (r10 - r00) + wx * (r11 - r01)
        dpx = (1 - wy) * (r01 - r00) + wy * (r11 - r10)
        return (g * dpy).sum(axis=1), (g * dpx).sum(axis=1)


def _rows(x: np.ndarray) -> np.ndarray:
    """``[N, C, H, W] -> [N*H*W, C]``."""
    n, c = x.shape[:2]
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1)).reshape(-1, c)


def bilinear_sample(x, py: float, px: float, c: int) -> float:
    """Read channel ``c`` of ``x [C, H, W]`` at fractional ``(py, px)``, zero outside."""
    xd = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    h, w = xd.shape[-2:]
    b = _Bilinear(h, w, np.array([[float(py)]]), np.array([[float(px)]]))
    out, _ = b.gather(xd[c].reshape(-1, 1))
    return float(out[0, 0])


def sample_bilinear(x, py, px) -> Tensor:
    """Differentiable bilinear read of ``x [C, H, W]`` at positions ``py, px [P]``.

    Returns ``[C, P]``; gradients flow to ``x`` and to both coordinate tensors.
    """
    x, py, px = as_tensor(x), as_tensor(py), as_tensor(px)
    if x.ndim != 3 or py.shape != px.shape or py.ndim != 1:
        raise ShapeError(f"sample_bilinear: x {x.shape}, py {py.shape}, px {px.shape}")
    c, h, w = x.shape
    b = _Bilinear(h, w, py.data[None], px.data[None])
    out, reads = b.gather(_rows(x.data[None]))

    def bw(g):
        gr = np.ascontiguousarray(g.T)
        gx = b.grad_rows(gr).reshape(h, w, c).transpose(2, 0, 1)
        gy, gxp = b.grad_pos(gr, reads)
        return np.ascontiguousarray(gx), gy, gxp

    return make_result(np.ascontiguousarray(out.T), (x, py, px), bw, "sample_bilinear")


def _tap_grid(k: int, h: int, w: int):
    r = k // 2
    ky, kx = np.divmod(np.arange(k * k), k)
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    base_y = (ky - r)[:, None, None] + ii[None]
    base_x = (kx - r)[:, None, None] + jj[None]
    return base_y, base_x  # [K*K, H, W]


def adaptive_conv(x, kernels, offsets, weight) -> Tensor:
    """Apply per-pixel kernels ``kernels [K*K, H, W]`` and offsets ``[2*K*K, H, W]``
    with the fixed weight ``weight [Cout, Cin, K, K]`` to ``x [Cin, H, W]``.

    All four arguments may carry a leading batch axis except ``weight``.
    """
    x, kernels, offsets, weight = (as_tensor(t) for t in (x, kernels, offsets, weight))
    unbatched = x.ndim == 3
    xd = x.data[None] if unbatched else x.data
    vd = kernels.data[None] if unbatched else kernels.data
    od = offsets.data[None] if unbatched else offsets.data
    if xd.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"adaptive_conv: x {x.shape}, weight {weight.shape}")
    n, cin, h, w = xd.shape
    cout, wcin, k, k2 = weight.shape
    kk = k * k
    if wcin != cin or k != k2:
        raise ShapeError(f"adaptive_conv: weight {weight.shape} does not fit input {x.shape}")
    if vd.shape != (n, kk, h, w) or od.shape != (n, 2 * kk, h, w):
        raise ShapeError(f"adaptive_conv: kernels {kernels.shape} / offsets {offsets.shape} "
                         f"must be {(kk, h, w)} / {(2 * kk, h, w)} for input {x.shape}")

    # sample rows ordered (n, pixel, tap) so taps x channels form one matmul operand
    base_y, base_x = _tap_grid(k, h, w)
    od5 = od.reshape(n, kk, 2, h, w)
    py = (base_y[None] + od5[:, :, 0]).transpose(0, 2, 3, 1).reshape(n, -1).astype(xd.dtype)
    px = (base_x[None] + od5[:, :, 1]).transpose(0, 2, 3, 1).reshape(n, -1).astype(xd.dtype)
    b = _Bilinear(h, w, py, px)
    sampled, reads = b.gather(_rows(xd))  # [N*H*W*K*K, Cin]
    s3 = sampled.reshape(n * h * w, kk, cin)
    v3 = vd.transpose(0, 2, 3, 1).reshape(n * h * w, kk, 1)
    t = (s3 * v3).reshape(n * h * w, kk * cin)
    wt = weight.data.transpose(2, 3, 1, 0).reshape(kk * cin, cout)
    y = (t @ wt).reshape(n, h, w, cout).transpose(0, 3, 1, 2)
    y = np.ascontiguousarray(y[0] if unbatched else y)

    def bw(g):
        g2 = (g[None] if unbatched else g).transpose(0, 2, 3, 1).reshape(n * h * w, cout)
        gw = (t.T @ g2).reshape(k, k, cin, cout).transpose(3, 2, 0, 1)
        gt = (g2 @ wt.T).reshape(n * h * w, kk, cin)
        gv = (gt * s3).sum(axis=2).reshape(n, h, w, kk).transpose(0, 3, 1, 2)
        gs = (gt * v3).reshape(-1, cin)
        gx = None
        if x.requires_grad:
            gx = b.grad_rows(gs).reshape(n, h, w, cin).transpose(0, 3, 1, 2)
        gpy, gpx = b.grad_pos(gs, reads)
        go = np.stack([gpy.reshape(n, h, w, kk), gpx.reshape(n, h, w, kk)], axis=-1)
        go = go.transpose(0, 3, 4, 1, 2).reshape(n, 2 * kk, h, w)
        gv, go, gw = np.ascontiguousarray(gv), np.ascontiguousarray(go), np.ascontiguousarray(gw)
        if gx is not None:
            gx = np.ascontiguousarray(gx[0] if unbatched else gx)
        if unbatched:
            gv, go = gv[0], go[0]
        return gx, gv, go, gw

    return make_result(y, (x, kernels, offsets, weight), bw, "adaptive_conv")


class AdaptiveConv2d(Module):
    """Fixed weight plus the kernel and offset generators.

    The offset generator starts at zero and the kernel generator's bias at
    ``UNIT_KERNEL_LOGIT``, so a fresh layer behaves like an ordinary
    convolution with ``weight``.
    """

    def __init__(self, cin: int, cout: int, rng: np.random.Generator, k: int = 3):
        if k % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {k}")
        self.k = k
        self.weight = parameter(he_normal(rng, (cout, cin, k, k), cin * k * k))
        self.kernel_gen = Conv2d(cin, k * k, 3, rng, zero_init=True)
        self.kernel_gen.bias.data[:] = UNIT_KERNEL_LOGIT
        self.offset_gen = Conv2d(cin, 2 * k * k, 3, rng, zero_init=True)

    def generate(self, x: Tensor) -> tuple[Tensor, Tensor]:
        return generate_kernels_offsets(x, self)

    def forward(self, x: Tensor) -> Tensor:
        kernels, offsets = self.generate(x)
        return adaptive_conv(x, kernels, offsets, self.weight)


def generate_kernels_offsets(x, params: AdaptiveConvParams) -> tuple[Tensor, Tensor]:
    """Predict non-negative kernels ``[K*K, H, W]`` and offsets ``[2*K*K, H, W]`` from ``x``."""
    x = as_tensor(x)
    h, w = x.shape[-2:]
    if h < params.k or w < params.k:
        raise ValueError(f"input spatial size {(h, w)} is smaller than kernel size {params.k}")
    kernels = ops.softplus(params.kernel_gen(x))
    offsets = params.offset_gen(x)
    return kernels, offsets


AdaptiveConvParams = AdaptiveConv2d
