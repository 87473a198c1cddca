"""Command line entry point: ``distill-inpaint <command> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import checkpoint
from .checks import CASES, run_suite
from .config import ConfigError, TrainConfig, load_config
from .data import gen_data, load_images
from .training import evaluate, inpaint, load_student, load_teacher, pretrain_teacher, train_student

log = logging.getLogger("distill_inpaint")


def _config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _require(value, what: str):
    if value is None:
        raise ConfigError(f"no {what} given (use the command line option or the config file)")
    return value


def cmd_gen_data(args, cfg: TrainConfig) -> None:
    out = _require(args.out or cfg.data, "output directory")
    paths = gen_data(cfg.seed, args.n, cfg.image_size, cfg.image_size, out)
    print(f"wrote {len(paths)} images to {out}")


def cmd_pretrain_teacher(args, cfg: TrainConfig) -> None:
    images = load_images(_require(args.data or cfg.data, "training data directory"))
    out = Path(args.out or "teacher.ckpt")
    _, history = pretrain_teacher(cfg, images, out)
    tail = history[-min(100, len(history)):]
    print(f"teacher saved to {out}; mean L1 over last {len(tail)} iterations {np.mean(tail):.4f}")


def cmd_train(args, cfg: TrainConfig) -> None:
    images = load_images(_require(args.data or cfg.data, "training data directory"))
    teacher = load_teacher(checkpoint.load(_require(args.teacher, "--teacher checkpoint")))
    resume = checkpoint.load(args.resume) if args.resume else None
    out = Path(args.out or "run")
    _, _, history = train_student(cfg, teacher, images, out, resume=resume)
    final = f"; final total loss {history[-1].total:.4f}" if history else ""
    print(f"student saved to {out / 'student.ckpt'}{final}")


def cmd_eval(args, cfg: TrainConfig) -> None:
    images = load_images(_require(args.data or cfg.eval_data, "evaluation data directory"))
    net, _, _ = load_student(checkpoint.load(_require(args.model, "--model checkpoint")))
    report = evaluate(net, images, seed=cfg.eval_seed, fill=cfg.fill)
    print(report.table())
    if args.out:
        Path(args.out).write_text(report.to_csv())


def cmd_inpaint(args, cfg: TrainConfig) -> None:
    net, _, _ = load_student(checkpoint.load(_require(args.model, "--model checkpoint")))
    out = _require(args.out, "--out file")
    inpaint(net, _require(args.image, "--image"), _require(args.mask, "--mask"), out, fill=cfg.fill)
    print(f"wrote {out}")


def cmd_gradcheck(args, cfg: TrainConfig) -> int:
    reports = run_suite(args.instances, cfg.seed, args.cases, log=print)
    lines = []
    for name, rep in reports.items():
        lines += [f"[{name}] {line}" for line in rep.lines()]
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n")
    failed = [n for n, r in reports.items() if not r.ok]
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return 1
    print("all gradient checks passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="distill-inpaint",
                                     description="Teacher-guided image inpainting on a small numpy autograd engine.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", help="output path")
        p.set_defaults(func=func)
        return p

    p = command("gen-data", cmd_gen_data, "write a synthetic PPM corpus")
    p.add_argument("--n", type=int, default=200, help="number of images")
    p = command("pretrain-teacher", cmd_pretrain_teacher, "train the autoencoder teacher")
    p.add_argument("--data", help="directory of training PPMs")
    p = command("train", cmd_train, "train the inpainting student")
    p.add_argument("--data", help="directory of training PPMs")
    p.add_argument("--teacher", help="teacher checkpoint")
    p.add_argument("--resume", help="student checkpoint to continue from")
    p = command("eval", cmd_eval, "PSNR/SSIM per mask-ratio bucket")
    p.add_argument("--data", help="directory of evaluation PPMs")
    p.add_argument("--model", help="student checkpoint")
    p = command("inpaint", cmd_inpaint, "inpaint one image")
    p.add_argument("--model", help="student checkpoint")
    p.add_argument("--image", help="input PPM")
    p.add_argument("--mask", help="PGM mask, pixels >= 128 are holes")
    p = command("gradcheck", cmd_gradcheck, "finite-difference check of every op")
    p.add_argument("--instances", type=int, default=20, help="random instances per op")
    p.add_argument("--cases", nargs="+", choices=sorted(CASES), help="subset of ops to check")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = _config(args)
        return args.func(args, cfg) or 0
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        # ValueError covers config, format, shape and checkpoint errors
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
