"""Ablation experiment: distillation terms and filler against a plain baseline."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .data import synth_corpus
from .masking import TABLE_BUCKETS
from .training import EvalReport, evaluate, pretrain_teacher, train_student

log = logging.getLogger(__name__)

VARIANTS = {
    "baseline": dict(use_cross=False, use_self=False, use_filler=False),
    "cross": dict(use_cross=True, use_self=False, use_filler=False),
    "self": dict(use_cross=False, use_self=True, use_filler=False),
    "filler": dict(use_cross=False, use_self=False, use_filler=True),
    "full": dict(use_cross=True, use_self=True, use_filler=True),
}

# Chosen on held-out validation seeds and eval corpus, never the acceptance
# seeds. Feature distances are sums over hole pixels, so the distillation
# weights are small next to the per-pixel L1 terms. Starting the student from
# the teacher's weights puts its features in the space the distillation terms
# pull towards, and the cosine decay removes most of the final-iterate noise.
EFFICACY_CONFIG = TrainConfig(lr=1e-3, lr_schedule="cosine", teacher_lr=1e-3, w_cross=0.01, w_self=0.01,
                              warm_start=True)

# the eval corpus is drawn from its own seed so it never overlaps training images
EVAL_CORPUS_SEED = 10_000


@dataclass
class AblationResult:
    # variant -> list of per-seed reports
    reports: dict = field(default_factory=dict)
    seconds: dict = field(default_factory=dict)

    def mean_hole_psnr(self, variant: str, bucket) -> float:
        return float(np.mean([r.bucket(*bucket).hole_psnr for r in self.reports[variant]]))

    def summary(self, buckets=TABLE_BUCKETS) -> str:
        lines = ["variant   " + "".join(f"  {lo:.0%}-{hi:.0%}" for lo, hi in buckets)]
        for v in self.reports:
            lines.append(f"{v:<10}" + "".join(f"  {self.mean_hole_psnr(v, b):7.3f}" for b in buckets))
        return "\n".join(lines)


def run_ablation(base: TrainConfig, seeds=(0, 1, 2), variants=tuple(VARIANTS), n_train: int = 200,
                 n_eval: int = 50) -> AblationResult:
    """Train each variant for each seed; one teacher per seed is shared by all variants."""
    size = base.image_size
    eval_images = synth_corpus(EVAL_CORPUS_SEED, n_eval, size, size)
    result = AblationResult()
    for seed in seeds:
        cfg = base.replace(seed=seed)
        images = synth_corpus(seed, n_train, size, size)
        t0 = time.perf_counter()
        teacher, hist = pretrain_teacher(cfg, images)
        log.info("seed %d teacher final l1 %.4f (%.0fs)", seed, np.mean(hist[-100:]), time.perf_counter() - t0)
        for v in variants:
            t0 = time.perf_counter()
            run_cfg = cfg.replace(**VARIANTS[v])
            net, _, _ = train_student(run_cfg, teacher, images)
            report: EvalReport = evaluate(net, eval_images, TABLE_BUCKETS, seed=cfg.eval_seed, fill=cfg.fill)
            result.reports.setdefault(v, []).append(report)
            result.seconds.setdefault(v, []).append(time.perf_counter() - t0)
            log.info("seed %d %s: %s", seed, v, report.to_csv().replace("\n", " | "))
    return result
