"""Teacher pretraining, student training, evaluation and single-image inpainting.

Every random draw is keyed by ``(seed, stream, ...)`` so a run is reproducible
bit for bit and can be resumed from any checkpoint without saving RNG state.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import checkpoint, netpbm
from .config import TrainConfig
from .distillation import LossReport, cross_distill_loss, reconstruction_loss, self_distill_loss, total_loss
from .masking import TABLE_BUCKETS, TRAIN_BUCKETS, build_mask_pyramid, generate_irregular_mask, load_mask_pgm
from .metrics import hole_psnr, psnr, ssim
from .networks import InpaintNet, NetworkConfig, TeacherAE, student_input
from .optim import AdamState, adam_step, cosine_lr
from .tensor import Tensor, backward, no_grad

log = logging.getLogger(__name__)

TEACHER_INIT, STUDENT_INIT, MASK_POOL, TEACHER_BATCH, STUDENT_BATCH, EVAL_MASK = range(1, 7)


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng([int(k) for k in key])


def build_mask_pool(seed: int, size: int, h: int, w: int) -> np.ndarray:
    """``size`` training masks cycling through the 0-60% ratio buckets."""
    return np.stack([generate_irregular_mask([seed, MASK_POOL, i], h, w, TRAIN_BUCKETS[i % len(TRAIN_BUCKETS)])
                     for i in range(size)])


def sample_batch(images: np.ndarray, pool: Optional[np.ndarray], seed: int, stream: int, it: int, batch: int):
    rng = _rng(seed, stream, it)
    gt = images[rng.integers(0, len(images), batch)]
    if pool is None:
        return gt, None
    masks = pool[rng.integers(0, len(pool), batch)].copy()
    flips = rng.integers(0, 4, batch)
    for i, f in enumerate(flips):
        if f & 1:
            masks[i] = masks[i, ::-1]
        if f & 2:
            masks[i] = masks[i, :, ::-1]
    return gt, masks


# -- checkpoint helpers ------------------------------------------------------

def teacher_state(teacher: TeacherAE) -> dict:
    out = {"meta.network": teacher.cfg.as_vector()}
    out.update({f"teacher.{k}": v for k, v in teacher.state_dict().items()})
    return out


def load_teacher(ckpt) -> TeacherAE:
    tensors = checkpoint.load(ckpt) if isinstance(ckpt, (str, Path)) else ckpt
    if "meta.network" not in tensors:
        raise ValueError("checkpoint has no network description")
    cfg = NetworkConfig.from_vector(tensors["meta.network"])
    teacher = TeacherAE(cfg, _rng(0))
    teacher.load_state_dict({k[len("teacher."):]: v for k, v in tensors.items() if k.startswith("teacher.")})
    return teacher


def student_state(net: InpaintNet, state: Optional[AdamState] = None, iteration: Optional[int] = None) -> dict:
    out = {"meta.network": net.cfg.as_vector()}
    out.update({f"student.{k}": v for k, v in net.state_dict().items()})
    if state is not None:
        out["adam.step"] = np.array([state.step], np.float32)
        for k in state.m:
            out[f"adam.m.{k}"] = state.m[k]
            out[f"adam.v.{k}"] = state.v[k]
    if iteration is not None:
        out["meta.iteration"] = np.array([iteration], np.float32)
    return out


def load_student(ckpt) -> tuple[InpaintNet, AdamState, int]:
    tensors = checkpoint.load(ckpt) if isinstance(ckpt, (str, Path)) else ckpt
    if "meta.network" not in tensors:
        raise ValueError("checkpoint has no network description")
    cfg = NetworkConfig.from_vector(tensors["meta.network"])
    net = InpaintNet(cfg, _rng(0))
    net.load_state_dict({k[len("student."):]: v for k, v in tensors.items() if k.startswith("student.")})
    state = AdamState()
    if "adam.step" in tensors:
        state.step = int(tensors["adam.step"][0])
        for k, v in tensors.items():
            if k.startswith("adam.m."):
                name = k[len("adam.m."):]
                state.m[name] = v.copy()
                state.v[name] = tensors[f"adam.v.{name}"].copy()
    iteration = int(tensors["meta.iteration"][0]) if "meta.iteration" in tensors else 0
    return net, state, iteration


# -- training ---------------------------------------------------------------

def pretrain_teacher(cfg: TrainConfig, images: np.ndarray, out=None) -> tuple[TeacherAE, list[float]]:
    """Train the autoencoder on whole-image L1; optionally save it to ``out``."""
    if len(images) == 0:
        raise ValueError("empty training set")
    teacher = TeacherAE(cfg.network, _rng(cfg.seed, TEACHER_INIT))
    state = AdamState()
    params = dict(teacher.named_parameters())
    no_holes = np.zeros((cfg.batch_size, cfg.image_size, cfg.image_size), np.uint8)
    history = []
    for it in range(cfg.teacher_iterations):
        gt, _ = sample_batch(images, None, cfg.seed, TEACHER_BATCH, it, cfg.batch_size)
        _, recon = teacher(gt)
        _, loss = reconstruction_loss(recon, gt, no_holes)
        if not np.isfinite(loss.item()):
            raise FloatingPointError(f"teacher loss is not finite at iteration {it}")
        teacher.zero_grad()
        backward(loss)
        adam_step(params, state, cfg.teacher_lr)
        history.append(loss.item())
        if it % 500 == 0:
            log.info("teacher iter %d l1 %.4f", it, history[-1])
    if out is not None:
        checkpoint.save(out, teacher_state(teacher))
    return teacher, history


def _check_compatible(teacher: TeacherAE, cfg: NetworkConfig) -> None:
    t = teacher.cfg
    if (t.levels, t.base_channels, t.input_size) != (cfg.levels, cfg.base_channels, cfg.input_size):
        raise ValueError(f"teacher network {t} does not match student config {cfg}")


def student_step(net: InpaintNet, teacher: TeacherAE, cfg: TrainConfig, gt: np.ndarray, masks: np.ndarray,
                 seen: Optional[np.ndarray] = None, self_targets: Optional[list] = None):
    """Forward pass and loss for one batch. Returns ``(loss, report, meta_weights)``.

    ``seen`` is the image the student and teacher are shown (``gt`` when omitted);
    ``gt`` is always the reconstruction target. ``self_targets`` pins the
    detached deeper features used by self distillation to fixed arrays, which
    lets finite differences see the same function backward() differentiates.
    """
    seen = gt if seen is None else seen
    L = net.cfg.levels
    pyr = build_mask_pyramid(masks, L)
    with no_grad():
        t_feats = teacher.encode(seen)
    feats, pred = net(student_input(seen, masks, cfg.fill), pyr)
    rec_hole, rec_valid = reconstruction_loss(pred, gt, masks)
    parts = {"rec_hole": rec_hole, "rec_valid": rec_valid}
    metas = []
    if cfg.use_cross:
        parts["cross"] = []
        for lv in range(L):
            rho = net.heads.rho[lv](t_feats[lv])
            metas.append(rho.data)
            parts["cross"].append(cross_distill_loss(feats[lv], t_feats[lv], pyr[lv], rho))
    if cfg.use_self:
        parts["self"] = []
        for lv in range(L - 1):
            target = feats[lv + 1].detach() if self_targets is None else Tensor(self_targets[lv])
            phi = net.heads.phi[lv](target)
            metas.append(phi.data)
            parts["self"].append(self_distill_loss(feats[lv], target, pyr[lv + 1], phi, net.heads.align[lv]))
    loss, report = total_loss(parts, cfg.weights)
    report.cross = report.cross or [0.0] * L
    report.self_ = report.self_ or [0.0] * (L - 1)
    return loss, report, metas


def warm_start_from(net: InpaintNet, teacher: TeacherAE) -> None:
    """Copy teacher weights into the student's feature path and decoder.

    The student's first conv sees a fourth (mask) channel; its weights for
    that channel are zeroed, so on a hole-free input the warm-started
    student reproduces the teacher up to float rounding.
    """
    for s_level, t_level in zip(net.levels, teacher.levels):
        for name, t_param in t_level.named_parameters():
            s_param = dict(s_level.feat.named_parameters())[name]
            if s_param.shape == t_param.shape:
                s_param.data[:] = t_param.data
            else:
                s_param.data[:] = 0
                s_param.data[:, :t_param.shape[1]] = t_param.data
    for (_, s_param), (_, t_param) in zip(net.decoder.named_parameters(), teacher.decoder.named_parameters()):
        s_param.data[:] = t_param.data


def train_student(cfg: TrainConfig, teacher: TeacherAE, images: np.ndarray, out_dir=None, resume=None,
                  monitor: Optional[Callable] = None) -> tuple[InpaintNet, AdamState, list[LossReport]]:
    """Train the inpainting network against a frozen teacher.

    With ``out_dir`` a ``losses.csv`` log and periodic ``student_XXXXXX.ckpt``
    files (plus ``student.ckpt`` at the end) are written. ``monitor(it,
    report, meta_weights)`` is called after every step.
    """
    if len(images) == 0:
        raise ValueError("empty training set")
    _check_compatible(teacher, cfg.network)
    teacher.freeze()
    if resume is not None:
        net, state, start = load_student(resume)
        if net.cfg != cfg.network:
            raise ValueError(f"checkpoint network {net.cfg} does not match config {cfg.network}")
    else:
        net, state, start = InpaintNet(cfg.network, _rng(cfg.seed, STUDENT_INIT)), AdamState(), 0
        if cfg.warm_start:
            warm_start_from(net, teacher)
    params = dict(net.named_parameters())
    pool = build_mask_pool(cfg.seed, cfg.mask_pool, cfg.image_size, cfg.image_size)

    writer = fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        fh = open(out_dir / "losses.csv", "a" if start else "w", newline="")
        writer = csv.writer(fh)
    history = []
    try:
        for it in range(start, cfg.iterations):
            gt, masks = sample_batch(images, pool, cfg.seed, STUDENT_BATCH, it, cfg.batch_size)
            loss, report, metas = student_step(net, teacher, cfg, gt, masks)
            if not np.isfinite(report.total):
                raise FloatingPointError(f"student loss is not finite at iteration {it}: {report}")
            net.zero_grad()
            backward(loss)
            lr = cosine_lr(cfg.lr, it, cfg.iterations) if cfg.lr_schedule == "cosine" else cfg.lr
            adam_step(params, state, lr)
            history.append(report)
            if writer is not None:
                if it == 0:
                    writer.writerow(report.csv_header())
                writer.writerow(report.csv_row(it))
            if monitor is not None:
                monitor(it, report, metas)
            if out_dir is not None and (it + 1) % cfg.checkpoint_every == 0:
                checkpoint.save(out_dir / f"student_{it + 1:06d}.ckpt", student_state(net, state, it + 1))
            if it % 500 == 0:
                log.info("student iter %d total %.4f hole %.4f", it, report.total, report.rec_hole)
    finally:
        if fh is not None:
            fh.close()
    if out_dir is not None:
        checkpoint.save(out_dir / "student.ckpt", student_state(net, state, cfg.iterations))
    return net, state, history


# -- evaluation -------------------------------------------------------------

@dataclass
class BucketResult:
    lo: float
    hi: float
    count: int
    psnr: float
    ssim: float
    hole_psnr: float


@dataclass
class EvalReport:
    buckets: list = field(default_factory=list)

    def bucket(self, lo: float, hi: float) -> BucketResult:
        for b in self.buckets:
            if np.isclose(b.lo, lo) and np.isclose(b.hi, hi):
                return b
        raise KeyError((lo, hi))

    def to_csv(self) -> str:
        rows = ["bucket_lo,bucket_hi,count,psnr,ssim,hole_psnr"]
        rows += [f"{b.lo},{b.hi},{b.count},{b.psnr!r},{b.ssim!r},{b.hole_psnr!r}" for b in self.buckets]
        return "\n".join(rows) + "\n"

    def table(self) -> str:
        head = " | ".join(f"{b.lo:.0%}-{b.hi:.0%}" for b in self.buckets)
        return "\n".join([
            f"Mask Ratio | {head}",
            "SSIM       | " + " | ".join(f"{b.ssim:.3f}" for b in self.buckets),
            "PSNR       | " + " | ".join(f"{b.psnr:.2f}" for b in self.buckets),
            "hole PSNR  | " + " | ".join(f"{b.hole_psnr:.2f}" for b in self.buckets),
        ])


def predict(net: InpaintNet, images: np.ndarray, masks: np.ndarray, fill: float = 0.0) -> np.ndarray:
    """Raw network output clamped to [0, 1]."""
    pyr = build_mask_pyramid(masks, net.cfg.levels)
    with no_grad():
        _, pred = net(student_input(images, masks, fill), pyr)
    return np.clip(pred.data, 0.0, 1.0)


def composite(pred: np.ndarray, gt: np.ndarray, masks: np.ndarray) -> np.ndarray:
    m = np.asarray(masks).astype(gt.dtype)[..., None, :, :]
    return pred * m + gt * (1 - m)


def evaluate(model, images: np.ndarray, buckets=TABLE_BUCKETS, seed: int = 1234, batch: int = 25,
             fill: float = 0.0) -> EvalReport:
    """PSNR / SSIM of the composited output per mask-ratio bucket.

    ``model`` is an :class:`InpaintNet` or any callable ``(images, masks) -> predictions``.
    """
    if len(images) == 0:
        raise ValueError("empty evaluation set")
    run = model if not isinstance(model, InpaintNet) else (lambda x, m: predict(model, x, m, fill))
    h, w = images.shape[-2:]
    report = EvalReport()
    for bi, bucket in enumerate(buckets):
        masks = np.stack([generate_irregular_mask([seed, EVAL_MASK, bi, i], h, w, bucket)
                          for i in range(len(images))])
        scores = []
        for s in range(0, len(images), batch):
            gt, m = images[s:s + batch], masks[s:s + batch]
            out = composite(np.asarray(run(gt, m)), gt, m)
            for o, g, mm in zip(out, gt, m):
                scores.append((psnr(o, g), ssim(o, g), hole_psnr(o, g, mm)))
        arr = np.array(scores)
        report.buckets.append(BucketResult(bucket[0], bucket[1], len(scores), *(float(v) for v in arr.mean(axis=0))))
    return report


def inpaint(model: InpaintNet, image_file, mask_file, out_file, fill: float = 0.0) -> np.ndarray:
    """Inpaint one PPM image under one PGM mask and write the composite as PPM."""
    img = netpbm.read_ppm(image_file)
    mask = load_mask_pgm(mask_file)
    if img.shape[:2] != mask.shape:
        raise ValueError(f"image {img.shape[1]}x{img.shape[0]} and mask {mask.shape[1]}x{mask.shape[0]} differ in size")
    size = model.cfg.input_size
    if img.shape[:2] != (size, size):
        raise ValueError(f"model expects {size}x{size} images, got {img.shape[1]}x{img.shape[0]}")
    gt = netpbm.image_to_float(img)[None]
    out = composite(predict(model, gt, mask[None], fill), gt, mask[None])[0]
    result = netpbm.float_to_image(out)
    netpbm.write(out_file, result)
    return result
