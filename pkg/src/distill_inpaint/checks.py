"""Finite-difference gradient suite over every differentiable operation.

Each case draws a random float64 instance, projects the op output onto a
fixed random tensor to get a scalar, and compares backward() with central
differences. Bilinear reads are only piecewise smooth, so sampling positions
keep their fractional parts in [0.2, 0.8], well clear of the kinks at
integer coordinates.
"""
from __future__ import annotations

import time
from typing import Callable, Optional

import numpy as np

from . import ops
from .adaptive_conv import adaptive_conv, sample_bilinear
from .config import TrainConfig
from .distillation import cross_distill_loss, self_distill_loss
from .gradcheck import GradcheckReport, gradcheck
from .masking import build_mask_pyramid
from .networks import AlignmentConv, InpaintNet, NetworkConfig, TeacherAE, student_input
from .tensor import Tensor, default_dtype, no_grad, parameter
from .training import student_step

EPS = 1e-3
TOL = 1e-3


def _var(rng, *shape, scale=1.0) -> Tensor:
    return parameter(rng.normal(0.0, scale, shape), dtype=np.float64)


def _fractional(rng, shape, lo=-2, hi=2) -> np.ndarray:
    return rng.integers(lo, hi + 1, shape) + rng.uniform(0.2, 0.8, shape)


def _mask(rng, *shape) -> np.ndarray:
    return (rng.random(shape) < rng.uniform(0.2, 0.8)).astype(np.float64)


# each case: rng -> (f, inputs, names)

def _case_conv2d(rng):
    n, cin, cout = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
    k = int(rng.choice([1, 3]))
    stride = int(rng.integers(1, 3))
    h, w = rng.integers(k + 1, 9, 2)
    x, wt, b = _var(rng, n, cin, h, w), _var(rng, cout, cin, k, k), _var(rng, cout)
    r = Tensor(rng.normal(size=ops.conv2d(x, wt, b, stride, k // 2).shape))
    return lambda t: ops.sum(ops.mul(ops.conv2d(t[0], t[1], t[2], stride, k // 2), r)), [x, wt, b], ["x", "weight", "bias"]


def _case_elu(rng):
    x = _var(rng, 3, 4, 5, scale=2.0)
    r = Tensor(rng.normal(size=x.shape))
    return lambda t: ops.sum(ops.mul(ops.elu(t[0]), r)), [x], ["x"]


def _case_linear(rng):
    n_in, n_out = rng.integers(1, 6, 2)
    shape = (int(n_in),) if rng.random() < 0.5 else (int(rng.integers(1, 4)), int(n_in))
    x, wt, b = _var(rng, *shape), _var(rng, n_out, n_in), _var(rng, n_out)
    r = Tensor(rng.normal(size=shape[:-1] + (int(n_out),)))
    return lambda t: ops.sum(ops.mul(ops.linear(*t), r)), [x, wt, b], ["x", "weight", "bias"]


def _case_softmax(rng):
    x = _var(rng, int(rng.integers(1, 4)), int(rng.integers(2, 7)), scale=1.5)
    r = Tensor(rng.normal(size=x.shape))
    return lambda t: ops.sum(ops.mul(ops.softmax(t[0]), r)), [x], ["x"]


def _case_pooling(rng):
    x = _var(rng, 2, 3, int(rng.integers(1, 6)), int(rng.integers(1, 6)))
    r = Tensor(rng.normal(size=(2, 3)))
    return lambda t: ops.sum(ops.mul(ops.global_avg_pool(t[0]), r)), [x], ["x"]


def _case_upsample(rng):
    x = _var(rng, 2, 3, 4)
    f = int(rng.integers(1, 4))
    r = Tensor(rng.normal(size=(2, 3 * f, 4 * f)))
    return lambda t: ops.sum(ops.mul(ops.upsample_nearest(t[0], f), r)), [x], ["x"]


def _case_masked_sq_norm(rng):
    c, h, w = rng.integers(1, 5, 3)
    batched = rng.random() < 0.5
    lead = (2,) if batched else ()
    d = _var(rng, *lead, c, h, w)
    m = _mask(rng, *lead, 1, h, w)
    r = Tensor(rng.normal(size=lead + (int(c),)))
    return lambda t: ops.sum(ops.mul(ops.masked_sq_norm(t[0], m), r)), [d], ["d"]


def _case_bilinear(rng):
    c, h, w = int(rng.integers(1, 4)), int(rng.integers(3, 7)), int(rng.integers(3, 7))
    p = int(rng.integers(1, 12))
    x = _var(rng, c, h, w)
    # positions may leave the frame by up to one pixel to exercise zero padding
    py = parameter(_fractional(rng, p, -1, h - 1), dtype=np.float64)
    px = parameter(_fractional(rng, p, -1, w - 1), dtype=np.float64)
    r = Tensor(rng.normal(size=(c, p)))
    return lambda t: ops.sum(ops.mul(sample_bilinear(*t), r)), [x, py, px], ["x", "py", "px"]


def _adaptive_instance(rng):
    n = int(rng.integers(1, 3))
    cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    k = int(rng.choice([1, 3]))
    h, w = int(rng.integers(2, 7)), int(rng.integers(2, 7))
    x = _var(rng, n, cin, h, w)
    v = parameter(rng.uniform(0.1, 2.0, (n, k * k, h, w)), dtype=np.float64)
    off = parameter(_fractional(rng, (n, 2 * k * k, h, w), -1, 1), dtype=np.float64)
    wt = _var(rng, cout, cin, k, k)
    return [x, v, off, wt]


def _case_adaptive_conv(rng):
    inputs = _adaptive_instance(rng)
    r = Tensor(rng.normal(size=ops.as_tensor(adaptive_conv(*inputs)).shape))
    return lambda t: ops.sum(ops.mul(adaptive_conv(*t), r)), inputs, ["x", "V", "offsets", "W"]


def _case_cross(rng):
    n, c, h, w = 2, int(rng.integers(1, 5)), int(rng.integers(2, 6)), int(rng.integers(2, 6))
    x = _var(rng, n, c, h, w)
    x_star = Tensor(rng.normal(size=(n, c, h, w)))
    logits = _var(rng, n, c)
    m = _mask(rng, n, h, w)
    return (lambda t: cross_distill_loss(t[0], x_star, m, ops.softmax(t[1])), [x, logits], ["x_l", "rho_logits"])


def _case_self(rng):
    cfg = NetworkConfig(levels=2, base_channels=int(rng.integers(2, 5)), input_size=8, filler=False)
    f = AlignmentConv(1, cfg, rng).astype(np.float64)
    c1, c2 = cfg.channels(1), cfg.channels(2)
    x = _var(rng, 2, c1, 4, 4)
    # x_{l+1} is a detached target, so it enters as a constant
    x_next = Tensor(rng.normal(size=(2, c2, 2, 2)))
    logits = _var(rng, 2, c2)
    m = _mask(rng, 2, 2, 2)
    params = [x, logits, f.conv.weight, f.conv.bias]

    def fn(t):
        return self_distill_loss(t[0], x_next, m, ops.softmax(t[1]), f)

    return fn, params, ["x_l", "phi_logits", "align.weight", "align.bias"]


def _model_instance(rng):
    cfg = TrainConfig(image_size=16, batch_size=2, levels=2, base_channels=2, mask_pool=1)
    with default_dtype(np.float64):
        net = InpaintNet(cfg.network, rng).astype(np.float64)
        teacher = TeacherAE(cfg.network, rng).astype(np.float64).freeze()
    # move the generators off their zero initialisation: small weights and
    # fractional offset biases keep every bilinear read inside one cell
    for level in net.levels:
        for ac in (level.fill.ac1, level.fill.ac2):
            ac.offset_gen.weight.data[:] = rng.normal(0, 1e-3, ac.offset_gen.weight.shape)
            ac.offset_gen.bias.data[:] = _fractional(rng, ac.offset_gen.bias.shape, -1, 1)
            ac.kernel_gen.weight.data[:] = rng.normal(0, 0.1, ac.kernel_gen.weight.shape)
    for head in net.heads.rho + net.heads.phi:
        head.fc2.weight.data[:] = rng.normal(0, 0.5, head.fc2.weight.shape)
    masks = (rng.random((2, 16, 16)) < 0.3).astype(np.uint8)
    img = rng.uniform(0, 1, (2, 3, 16, 16))
    # the target sits a fixed margin away from the prediction, keeping the L1
    # residual away from its kink at zero
    with no_grad():
        feats, pred = net(student_input(img, masks), build_mask_pyramid(masks, 2))
    gt = pred.data + rng.choice([-1.0, 1.0], pred.shape) * rng.uniform(0.05, 0.3, pred.shape)
    # self distillation compares against detached deeper features; hold them
    # at their base-point values so the numeric and analytic sides agree
    targets = [f.data.copy() for f in feats[1:]]
    return cfg, net, teacher, img, gt, masks, targets


def _case_full_model(rng):
    cfg, net, teacher, img, gt, masks, targets = _model_instance(rng)
    names, params = zip(*net.named_parameters())

    def fn(t):
        return student_step(net, teacher, cfg, gt, masks, seen=img, self_targets=targets)[0]

    return fn, list(params), list(names)


CASES = {
    "conv2d": (_case_conv2d, None),
    "elu": (_case_elu, None),
    "linear": (_case_linear, None),
    "softmax": (_case_softmax, None),
    "global_avg_pool": (_case_pooling, None),
    "upsample_nearest": (_case_upsample, None),
    "masked_sq_norm": (_case_masked_sq_norm, None),
    "bilinear_sample": (_case_bilinear, None),
    "adaptive_conv": (_case_adaptive_conv, 40),
    "cross_distill_loss": (_case_cross, None),
    "self_distill_loss": (_case_self, None),
    "full_model": (_case_full_model, 3),
}


def run_suite(instances: int = 20, seed: int = 0, cases: Optional[list] = None,
              log: Optional[Callable[[str], None]] = None) -> dict[str, GradcheckReport]:
    """Gradcheck every case on ``instances`` random draws; returns one merged report per case."""
    out = {}
    for name in cases or CASES:
        build, max_coords = CASES[name]
        t0 = time.perf_counter()
        merged = GradcheckReport(tol=TOL)
        for i in range(instances):
            rng = np.random.default_rng([seed, i, len(name)])
            with default_dtype(np.float64):
                f, inputs, names = build(rng)
                rep = gradcheck(f, inputs, eps=EPS, names=names, max_coords=max_coords, rng=rng, tol=TOL,
                                skip_kinks=True)
            merged.merge(rep)
        out[name] = merged
        if log is not None:
            log(f"{name}: worst rel err {merged.worst:.3e} over {instances} instances "
                f"({time.perf_counter() - t0:.1f}s) {'ok' if merged.ok else 'FAIL'}")
    return out
