"""Irregular hole masks, mask pyramids and mask application.

Masks are ``uint8`` ``H x W`` grids with 1 marking a hole (missing pixel).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import netpbm
from .tensor import ShapeError, Tensor

MAX_HOLE_RATIO = 0.6
TABLE_BUCKETS = ((0.10, 0.20), (0.30, 0.40))
TRAIN_BUCKETS = tuple((round(0.1 * i, 1), round(0.1 * (i + 1), 1)) for i in range(6))


class MaskGenerationError(RuntimeError):
    pass


@dataclass
class MaskPyramid:
    levels: list  # level l (1-based) at index l-1, each 1/2**l of the input size

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, i):
        return self.levels[i]


def mask_ratio(m: np.ndarray) -> float:
    m = np.asarray(m)
    return float(m.sum()) / m.size


def _stamp_stroke(rng: np.random.Generator, grid: np.ndarray) -> None:
    h, w = grid.shape
    side = min(h, w)
    radius = rng.uniform(0.05, 0.15) * side / 2
    y, x = rng.uniform(0, h), rng.uniform(0, w)
    points = [(y, x)]
    for _ in range(int(rng.integers(4, 13)) - 1):
        angle = rng.uniform(0, 2 * np.pi)
        length = rng.uniform(0.1, 0.3) * side
        y = float(np.clip(y + length * np.sin(angle), 0, h - 1))
        x = float(np.clip(x + length * np.cos(angle), 0, w - 1))
        points.append((y, x))
    r2 = radius * radius
    reach = int(np.ceil(radius))
    step = max(radius / 2, 0.5)
    for (y0, x0), (y1, x1) in zip(points[:-1], points[1:]):
        n = int(np.ceil(np.hypot(y1 - y0, x1 - x0) / step)) + 1
        for t in np.linspace(0.0, 1.0, n):
            cy, cx = y0 + t * (y1 - y0), x0 + t * (x1 - x0)
            ya, yb = max(int(cy) - reach, 0), min(int(cy) + reach + 2, h)
            xa, xb = max(int(cx) - reach, 0), min(int(cx) + reach + 2, w)
            yy, xx = np.ogrid[ya:yb, xa:xb]
            # pixel centres at integer coordinates
            grid[ya:yb, xa:xb] |= ((yy - cy) ** 2 + (xx - cx) ** 2) <= r2


def _erode_to(rng: np.random.Generator, grid: np.ndarray, hi: float) -> None:
    """Peel randomly chosen boundary hole pixels until the ratio is <= hi."""
    while mask_ratio(grid) > hi:
        padded = np.pad(grid, 1)
        interior = padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
        boundary = np.flatnonzero(grid & ~interior)
        excess = int(grid.sum()) - int(np.floor(hi * grid.size))
        drop = rng.permutation(boundary)[:max(excess, 1)]
        grid.reshape(-1)[drop] = False


def generate_irregular_mask(seed, h: int, w: int, bucket=(0.10, 0.20), max_strokes: int = 1000) -> np.ndarray:
    """Random brush-stroke mask whose hole ratio lies inside ``bucket``.

    Deterministic for a given seed (anything ``np.random.default_rng`` accepts).
    """
    lo, hi = bucket
    if not (0.0 <= lo < hi <= MAX_HOLE_RATIO):
        raise ValueError(f"infeasible mask bucket {bucket}; need 0 <= lo < hi <= {MAX_HOLE_RATIO}")
    if h < 16 or w < 16:
        raise ValueError(f"mask size must be at least 16x16, got {h}x{w}")
    rng = np.random.default_rng(seed)
    grid = np.zeros((h, w), dtype=bool)
    for _ in range(max_strokes):
        _stamp_stroke(rng, grid)
        if mask_ratio(grid) > hi:
            _erode_to(rng, grid, hi)
        r = mask_ratio(grid)
        if lo <= r <= hi:
            return grid.astype(np.uint8)
    raise MaskGenerationError(f"could not reach mask bucket {bucket} within {max_strokes} strokes")


def build_mask_pyramid(m: np.ndarray, levels: int) -> MaskPyramid:
    """Max-pool ``m`` with windows 2, 4, ..., 2**levels: a coarse pixel is a hole
    if any pixel it covers is."""
    m = np.asarray(m)
    h, w = m.shape[-2:]
    f = 2 ** levels
    if levels < 1 or h % f or w % f:
        raise ValueError(f"mask size {h}x{w} is not divisible by 2**{levels}")
    lead = m.shape[:-2]
    out = []
    for lv in range(1, levels + 1):
        s = 2 ** lv
        out.append(m.reshape(*lead, h // s, s, w // s, s).max(axis=(-3, -1)))
    return MaskPyramid(out)


def apply_mask(img, m, fill: float = 0.0) -> Tensor:
    """``img * (1 - m) + fill * m`` for ``img [3, H, W]`` (or batched) and ``m [H, W]``."""
    data = img.data if isinstance(img, Tensor) else np.asarray(img)
    if data.dtype not in (np.float32, np.float64):
        data = data.astype(np.float32)
    m = np.asarray(m)
    if m.shape[-2:] != data.shape[-2:] or (m.ndim == 3 and m.shape[0] != data.shape[0]):
        raise ShapeError(f"apply_mask: image {data.shape} and mask {m.shape} differ in size")
    mf = m.astype(data.dtype)[..., None, :, :]
    return Tensor(data * (1 - mf) + data.dtype.type(fill) * mf)


def save_mask_pgm(path, m: np.ndarray) -> None:
    netpbm.write(path, (np.asarray(m) != 0).astype(np.uint8) * 255)


def load_mask_pgm(path) -> np.ndarray:
    """Load a binary P5 mask; pixel values >= 128 are holes."""
    return (netpbm.read_pgm(path) >= 128).astype(np.uint8)
