"""Cross/self feature distillation and pixel reconstruction losses.

Batched inputs (leading ``N``) are averaged over the batch; every term is the
per-sample quantity for unbatched inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .networks import AlignmentConv, align
from .tensor import ShapeError, Tensor, as_tensor


@dataclass(frozen=True)
class LossWeights:
    rec_hole: float = 6.0
    rec_valid: float = 1.0
    cross: float = 1.0
    self_: float = 1.0

    def __post_init__(self):
        vals = (self.rec_hole, self.rec_valid, self.cross, self.self_)
        if any(v < 0 for v in vals):
            raise ValueError(f"loss weights must be non-negative: {self}")
        if not any(v > 0 for v in vals):
            raise ValueError("at least one loss weight must be positive")


@dataclass
class LossReport:
    rec_hole: float = 0.0
    rec_valid: float = 0.0
    cross: list = field(default_factory=list)
    self_: list = field(default_factory=list)
    total: float = 0.0

    def csv_header(self) -> list[str]:
        return (["iter", "rec_hole", "rec_valid"] + [f"cross_{i + 1}" for i in range(len(self.cross))]
                + [f"self_{i + 1}" for i in range(len(self.self_))] + ["total"])

    def csv_row(self, iteration: int) -> list[str]:
        vals = [self.rec_hole, self.rec_valid, *self.cross, *self.self_, self.total]
        return [str(iteration)] + [repr(float(v)) for v in vals]


def _check_simplex(w: Tensor, name: str) -> None:
    s = w.data.sum(axis=-1)
    if np.any(w.data < -1e-5) or np.any(np.abs(s - 1) > 1e-5):
        raise ValueError(f"{name} weights are not on the probability simplex (sums {np.ravel(s)[:4]})")


def _weighted_channel_loss(diff: Tensor, m, weights, name: str) -> Tensor:
    weights = as_tensor(weights)
    _check_simplex(weights, name)
    norms = ops.masked_sq_norm(diff, _mask_channel(m, diff))
    if weights.shape != norms.shape:
        raise ShapeError(f"{name} weights {weights.shape} do not match per-channel norms {norms.shape}")
    total = ops.sum(ops.mul(weights, norms))
    return ops.scalar_mul(total, 1.0 / diff.shape[0]) if diff.ndim == 4 else total


def _mask_channel(m, like: Tensor) -> np.ndarray:
    m = m.data if isinstance(m, Tensor) else np.asarray(m)
    if m.ndim == like.ndim - 1:
        m = m[..., None, :, :]
    return m


def cross_distill_loss(x_l, x_l_star, m_l, rho) -> Tensor:
    """``sum_c rho[c] * ||(x_l - x_l*)_c * M_l||^2``; ``x_l*`` is treated as a constant."""
    x_l = as_tensor(x_l)
    x_star = as_tensor(x_l_star).detach()
    if x_l.shape != x_star.shape:
        raise ShapeError(f"cross distillation: student {x_l.shape} vs teacher {x_star.shape}")
    return _weighted_channel_loss(ops.sub(x_l, x_star), m_l, rho, "rho")


def self_distill_loss(x_l, x_lplus1, m_lplus1, phi, f_l: AlignmentConv) -> Tensor:
    """``sum_c phi[c] * ||(f_l(x_l) - x_{l+1})_c * M_{l+1}||^2`` with ``x_{l+1}`` detached."""
    aligned = align(x_l, f_l)
    target = as_tensor(x_lplus1).detach()
    if aligned.shape != target.shape:
        raise ShapeError(f"self distillation: aligned {aligned.shape} vs deeper feature {target.shape}")
    return _weighted_channel_loss(ops.sub(aligned, target), m_lplus1, phi, "phi")


def reconstruction_loss(pred, gt, m) -> tuple[Tensor, Tensor]:
    """Mean absolute error over hole pixels and over known pixels.

    An empty region contributes exactly zero.
    """
    pred, gt = as_tensor(pred), as_tensor(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"reconstruction: prediction {pred.shape} vs target {gt.shape}")
    mk = _mask_channel(m, pred)
    if mk.shape[-2:] != pred.shape[-2:]:
        raise ShapeError(f"reconstruction: mask {np.shape(m)} vs image {pred.shape}")
    hole = np.broadcast_to(mk.astype(pred.dtype), pred.shape)
    valid = 1 - hole
    err = ops.abs(ops.sub(pred, gt))
    out = []
    for region in (hole, valid):
        count = float(region.sum())
        term = ops.sum(ops.mul(err, Tensor(region)))
        out.append(ops.scalar_mul(term, 1.0 / count) if count else ops.scalar_mul(term, 0.0))
    return out[0], out[1]


def total_loss(parts: dict, w: LossWeights) -> tuple[Tensor, LossReport]:
    """Weighted sum of ``parts['rec_hole']``, ``parts['rec_valid']`` and the
    per-level lists ``parts['cross']`` (levels 1..L) and ``parts['self']``
    (levels 1..L-1). Missing terms count as zero."""
    report = LossReport()
    terms = []
    for key, weight in (("rec_hole", w.rec_hole), ("rec_valid", w.rec_valid)):
        t = parts.get(key)
        if t is not None:
            setattr(report, key, t.item())
            terms.append(ops.scalar_mul(t, weight))
    for key, attr, weight in (("cross", "cross", w.cross), ("self", "self_", w.self_)):
        level_terms = parts.get(key) or []
        setattr(report, attr, [t.item() for t in level_terms])
        terms.extend(ops.scalar_mul(t, weight) for t in level_terms)
    if not terms:
        raise ValueError("total_loss needs at least one term")
    total = terms[0]
    for t in terms[1:]:
        total = ops.add(total, t)
    report.total = total.item()
    return total, report
