"""Teacher autoencoder, student inpainting network and distillation heads.

Both encoders share one level structure: level ``l`` halves the resolution
and has ``base_channels * 2**(l-1)`` channels, so teacher and student
features can be compared directly at every breakpoint.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .adaptive_conv import AdaptiveConv2d
from .masking import MaskPyramid, apply_mask
from .nn import Conv2d, Linear, Module
from .tensor import ShapeError, Tensor, as_tensor


@dataclass(frozen=True)
class NetworkConfig:
    levels: int = 3
    base_channels: int = 16
    input_size: int = 32
    kernel_size: int = 3
    filler: bool = True

    def __post_init__(self):
        if self.levels < 1 or self.base_channels < 2 or self.kernel_size % 2 == 0:
            raise ValueError(f"invalid network config {self}")
        if self.input_size % (2 ** self.levels):
            raise ValueError(f"input size {self.input_size} not divisible by 2**{self.levels}")

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** (level - 1)

    def feature_shape(self, level: int) -> tuple[int, int, int]:
        s = self.input_size // 2 ** level
        return (self.channels(level), s, s)

    def as_vector(self) -> np.ndarray:
        return np.array([self.levels, self.base_channels, self.input_size, self.kernel_size, int(self.filler)],
                        dtype=np.float32)

    @classmethod
    def from_vector(cls, v) -> "NetworkConfig":
        lv, base, size, k, filler = (int(round(float(a))) for a in v)
        return cls(lv, base, size, k, bool(filler))


class FeatureLevel(Module):
    """``f_feat``: stride-2 conv + ELU (the shared downsampling stage), then conv + ELU."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        self.down = Conv2d(cin, cout, 3, rng, stride=2)
        self.body = Conv2d(cout, cout, 3, rng)

    def downsample(self, x: Tensor) -> Tensor:
        return ops.elu(self.down(x))

    def refine(self, h: Tensor) -> Tensor:
        return ops.elu(self.body(h))

    def forward(self, x: Tensor) -> Tensor:
        return self.refine(self.downsample(x))


class FillerBlock(Module):
    """``f_fill``: two adaptive convolutions with an ELU between them.

    Its output is added (hole positions only) to the feature path, so with all
    parameters zero it contributes exactly nothing.
    """

    def __init__(self, channels: int, rng: np.random.Generator, k: int = 3):
        self.ac1 = AdaptiveConv2d(channels, channels, rng, k)
        self.ac2 = AdaptiveConv2d(channels, channels, rng, k)

    def forward(self, h: Tensor) -> Tensor:
        return self.ac2(ops.elu(self.ac1(h)))


class StudentLevel(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator, k: int, filler: bool):
        self.feat = FeatureLevel(cin, cout, rng)
        self.fill = FillerBlock(cout, rng, k) if filler else None

    def forward(self, e: Tensor, m: np.ndarray) -> Tensor:
        """``E_m = f_feat(E_{m-1}) + f_fill(f_down(E_{m-1})) * M_m``; ``m`` is ``[N, H, W]`` or ``[H, W]``."""
        h = self.feat.downsample(e)
        out = self.feat.refine(h)
        if self.fill is None:
            return out
        mk = np.asarray(m)
        if mk.shape[-2:] != out.shape[-2:]:
            raise ShapeError(f"level mask {mk.shape} does not match feature map {out.shape}")
        gate = ops.expand_mask(mk[..., None, :, :], out.shape[-3], out.dtype)
        return ops.add(out, ops.mul(self.fill(h), gate))


class Decoder(Module):
    """``levels`` x (nearest x2 upsample, conv, ELU) followed by a linear 3-channel conv."""

    def __init__(self, cfg: NetworkConfig, rng: np.random.Generator):
        self.blocks = [Conv2d(cfg.channels(lv), cfg.channels(max(lv - 1, 1)), 3, rng)
                       for lv in range(cfg.levels, 0, -1)]
        self.out = Conv2d(cfg.base_channels, 3, 3, rng)
        self.cfg = cfg

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-3:] != self.cfg.feature_shape(self.cfg.levels):
            raise ShapeError(f"decoder input {x.shape} != {self.cfg.feature_shape(self.cfg.levels)}")
        for conv in self.blocks:
            x = ops.elu(conv(ops.upsample_nearest(x, 2)))
        return self.out(x)


class TeacherAE(Module):
    """Under-complete autoencoder trained on ground-truth images."""

    def __init__(self, cfg: NetworkConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.levels = [FeatureLevel(3 if lv == 1 else cfg.channels(lv - 1), cfg.channels(lv), rng)
                       for lv in range(1, cfg.levels + 1)]
        self.decoder = Decoder(cfg, rng)

    def encode(self, gt) -> list[Tensor]:
        x = as_tensor(gt)
        if x.shape[-3:] != (3, self.cfg.input_size, self.cfg.input_size):
            raise ShapeError(f"teacher expects 3x{self.cfg.input_size}x{self.cfg.input_size} images, got {x.shape}")
        feats = []
        for level in self.levels:
            x = level(x)
            feats.append(x)
        return feats

    def forward(self, gt) -> tuple[list[Tensor], Tensor]:
        feats = self.encode(gt)
        return feats, self.decoder(feats[-1])


def teacher_forward(gt, teacher: TeacherAE) -> tuple[list[Tensor], Tensor]:
    return teacher(gt)


class MetaNet(Module):
    """Channel-importance predictor: GAP -> linear -> ELU -> linear -> softmax."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.channels = channels
        self.fc1 = Linear(channels, max(channels // 2, 1), rng)
        self.fc2 = Linear(max(channels // 2, 1), channels, rng, zero_init=True)

    def forward(self, feature) -> Tensor:
        feature = as_tensor(feature)
        if feature.ndim not in (3, 4) or feature.shape[-3] != self.channels:
            raise ShapeError(f"meta-net for {self.channels} channels got feature {feature.shape}")
        return ops.softmax(self.fc2(ops.elu(self.fc1(ops.global_avg_pool(feature)))))


def meta_weights(feature, net: MetaNet) -> Tensor:
    return net(feature)


class AlignmentConv(Module):
    """Stride-2 conv mapping a level-l feature onto the level-(l+1) shape."""

    def __init__(self, level: int, cfg: NetworkConfig, rng: np.random.Generator):
        self.level = level
        self.total_levels = cfg.levels
        self.conv = Conv2d(cfg.channels(level), cfg.channels(level + 1), 3, rng, stride=2)

    def forward(self, x) -> Tensor:
        return self.conv(x)


def align(x_l, f_l: AlignmentConv) -> Tensor:
    if f_l.level >= f_l.total_levels:
        raise ValueError(f"no alignment exists for the deepest level {f_l.level}")
    return f_l(x_l)


class DistillationHeads(Module):
    def __init__(self, cfg: NetworkConfig, rng: np.random.Generator):
        self.rho = [MetaNet(cfg.channels(lv), rng) for lv in range(1, cfg.levels + 1)]
        self.phi = [MetaNet(cfg.channels(lv + 1), rng) for lv in range(1, cfg.levels)]
        self.align = [AlignmentConv(lv, cfg, rng) for lv in range(1, cfg.levels)]


class InpaintNet(Module):
    """Student: masked image + mask channel -> encoder with filler blocks -> decoder."""

    def __init__(self, cfg: NetworkConfig, rng: np.random.Generator):
        self.cfg = cfg
        # separate streams keep the feature path and decoder initialisation
        # identical whether or not filler blocks are built
        feat_rng, fill_rng, dec_rng, head_rng = rng.spawn(4)
        self.levels = []
        for lv in range(1, cfg.levels + 1):
            level = StudentLevel(4 if lv == 1 else cfg.channels(lv - 1), cfg.channels(lv), feat_rng,
                                 cfg.kernel_size, filler=False)
            if cfg.filler:
                level.fill = FillerBlock(cfg.channels(lv), fill_rng, cfg.kernel_size)
            self.levels.append(level)
        self.decoder = Decoder(cfg, dec_rng)
        self.heads = DistillationHeads(cfg, head_rng)

    def encode(self, x, pyramid: MaskPyramid) -> list[Tensor]:
        x = as_tensor(x)
        if x.shape[-3:] != (4, self.cfg.input_size, self.cfg.input_size):
            raise ShapeError(f"student expects 4x{self.cfg.input_size}x{self.cfg.input_size} input, got {x.shape}")
        if len(pyramid) != self.cfg.levels:
            raise ShapeError(f"mask pyramid has {len(pyramid)} levels, network has {self.cfg.levels}")
        feats = []
        for level, m in zip(self.levels, pyramid.levels):
            x = level(x, m)
            feats.append(x)
        return feats

    def forward(self, x, pyramid: MaskPyramid) -> tuple[list[Tensor], Tensor]:
        feats = self.encode(x, pyramid)
        return feats, self.decoder(feats[-1])


def student_input(img, m: np.ndarray, fill: float = 0.0) -> Tensor:
    """Masked image with the mask appended as a fourth channel."""
    masked = apply_mask(img, m, fill).data
    mf = np.asarray(m).astype(masked.dtype)[..., None, :, :]
    return Tensor(np.concatenate([masked, mf], axis=-3))


def student_encode(masked_input, m, pyramid: MaskPyramid, net: InpaintNet) -> list[Tensor]:
    return net.encode(masked_input, pyramid)


def decode(x_l, net) -> Tensor:
    return net.decoder(x_l)
