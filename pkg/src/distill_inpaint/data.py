"""Procedural toy image corpus and directory loading."""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from . import netpbm


def synth_image(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Linear colour gradient + 2-5 filled ellipses + a faint sinusoidal texture, ``[H, W, 3]`` uint8."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    yy /= max(h - 1, 1)
    xx /= max(w - 1, 1)
    angle = rng.uniform(0, 2 * np.pi)
    t = np.cos(angle) * xx + np.sin(angle) * yy
    t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
    c0, c1 = rng.uniform(0, 1, 3), rng.uniform(0, 1, 3)
    img = c0 * (1 - t[..., None]) + c1 * t[..., None]
    for _ in range(int(rng.integers(2, 6))):
        cy, cx = rng.uniform(0, 1, 2)
        ry, rx = rng.uniform(0.08, 0.35, 2)
        theta = rng.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = np.cos(theta) * dx + np.sin(theta) * dy
        v = -np.sin(theta) * dx + np.cos(theta) * dy
        inside = (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
        img[inside] = rng.uniform(0, 1, 3)
    freq = rng.uniform(2, 8)
    phi = rng.uniform(0, 2 * np.pi)
    tex_angle = rng.uniform(0, np.pi)
    wave = np.sin(2 * np.pi * freq * (np.cos(tex_angle) * xx + np.sin(tex_angle) * yy) + phi)
    img = img + rng.uniform(0.02, 0.08) * wave[..., None]
    return np.clip(np.rint(img * 255), 0, 255).astype(np.uint8)


def gen_data(seed: int, n: int, h: int, w: int, out_dir) -> list[Path]:
    if n < 1:
        raise ValueError(f"need at least one image, got n={n}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(n):
        p = out / f"img_{i:05d}.ppm"
        netpbm.write(p, synth_image(rng, h, w))
        paths.append(p)
    return paths


def synth_corpus(seed: int, n: int, h: int, w: int) -> np.ndarray:
    """In-memory equivalent of :func:`gen_data` as ``[N, 3, H, W]`` float32."""
    rng = np.random.default_rng(seed)
    return np.stack([netpbm.image_to_float(synth_image(rng, h, w)) for _ in range(n)])


def load_images(path) -> np.ndarray:
    """Load every ``*.ppm`` in a directory (sorted by name) as ``[N, 3, H, W]`` float32."""
    files = sorted(Path(path).glob("*.ppm"))
    if not files:
        raise FileNotFoundError(f"no .ppm images found in {path}")
    imgs = [netpbm.image_to_float(netpbm.read_ppm(f)) for f in files]
    shapes = {im.shape for im in imgs}
    if len(shapes) != 1:
        raise ValueError(f"images in {path} have differing sizes: {sorted(shapes)}")
    return np.stack(imgs)
