"""Convolutional pixel decoder.

At each level the projected skip, the upsampled previous main features and
two coordinate channels are concatenated and refined::

    X   = SE(G_x([X_s, X', coords]) + X')
    X_m = G_m(X_m' + X)

Both X and X_m are bilinearly upsampled before the next (finer) level.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..config import ConfigError
from ..core import BatchNorm2d, Conv2d, DepthwiseConv2d, Linear, Module, ModuleList, ShapeError, Tensor
from ..core import functional as F
from .encoder import ConvBNReLU, FeaturePyramid


@dataclass
class DecoderLevelOutput:
    x_main: Tensor
    x_mask: Tensor
    level: int  # 1 = coarsest


def coord_channels(h: int, w: int) -> np.ndarray:
    """[2, H, W] array: x then y, each spanning [-1, 1]; a single sample maps to -1."""
    xs = np.linspace(-1.0, 1.0, w) if w > 1 else np.array([-1.0])
    ys = np.linspace(-1.0, 1.0, h) if h > 1 else np.array([-1.0])
    return np.stack([np.broadcast_to(xs[None, :], (h, w)), np.broadcast_to(ys[:, None], (h, w))])


def inject_coords(x: Tensor) -> Tensor:
    n, _, h, w = x.shape
    coords = np.broadcast_to(coord_channels(h, w)[None], (n, 2, h, w)).copy()
    return F.concat([x, Tensor(coords)], axis=1)


class SEBlock(Module):
    """Squeeze-and-excitation channel gate."""

    def __init__(self, channels: int, reduction: int, rng: np.random.Generator):
        super().__init__()
        if channels % reduction:
            raise ConfigError(f"SE block: {channels} channels not divisible by reduction {reduction}")
        self.fc1 = Linear(channels, channels // reduction, rng)
        self.fc2 = Linear(channels // reduction, channels, rng)

    def gate(self, x: Tensor) -> Tensor:
        squeezed = x.mean(axis=(2, 3))
        g = F.sigmoid(self.fc2(F.relu(self.fc1(squeezed))))
        return g.reshape(x.shape[0], x.shape[1], 1, 1)

    def forward(self, x: Tensor) -> Tensor:
        return x * self.gate(x)


class DepthwiseSeparableBlock(Module):
    """3x3 depthwise conv, 1x1 pointwise conv, batchnorm, ReLU."""

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator):
        super().__init__()
        self.depthwise = DepthwiseConv2d(in_ch, 3, rng)
        self.pointwise = Conv2d(in_ch, out_ch, 1, rng, bias=False)
        self.bn = BatchNorm2d(out_ch)

    def forward(self, x):
        return F.relu(self.bn(self.pointwise(self.depthwise(x))))


class DecoderLevel(Module):
    def __init__(self, skip_channels: int, dim: int, rng: np.random.Generator, use_se: bool = True,
                 se_reduction: int = 4, use_coordconv: bool = True):
        super().__init__()
        self.use_coordconv = use_coordconv
        self.skip_proj = Conv2d(skip_channels, dim, 1, rng)
        fused_in = 2 * dim + (2 if use_coordconv else 0)
        self.g_x = ModuleList([DepthwiseSeparableBlock(fused_in, dim, rng), DepthwiseSeparableBlock(dim, dim, rng)])
        self.se = SEBlock(dim, se_reduction, rng) if use_se else None
        self.g_m = ModuleList([ConvBNReLU(dim, dim, rng), ConvBNReLU(dim, dim, rng)])

    def fuse_skip(self, x_prev_up: Tensor, skip: Tensor, projected: bool = False) -> Tensor:
        """Main-feature update X from the upsampled X' and the raw (or projected) skip."""
        if x_prev_up.shape[2:] != skip.shape[2:]:
            raise ShapeError(f"fuse_skip: spatial size of X' {x_prev_up.shape[2:]} != skip {skip.shape[2:]}")
        x_s = skip if projected else self.skip_proj(skip)
        h = F.concat([x_s, x_prev_up], axis=1)
        if self.use_coordconv:
            h = inject_coords(h)
        for block in self.g_x:
            h = block(h)
        h = h + x_prev_up
        return self.se(h) if self.se is not None else h

    def update_mask_features(self, x_mask_prev_up: Optional[Tensor], x_main: Tensor) -> Tensor:
        if x_mask_prev_up is not None:
            if x_mask_prev_up.shape != x_main.shape:
                raise ShapeError(f"update_mask_features: X_m' shape {x_mask_prev_up.shape} != X shape {x_main.shape}")
            h = x_mask_prev_up + x_main
        else:
            h = x_main
        for block in self.g_m:
            h = block(h)
        return h


class PixelDecoder(Module):
    """Three levels: 1/32 -> 1/16 -> 1/8. The 1/4 map is left to the mask head."""

    def __init__(self, encoder_channels: tuple[int, ...], dim: int, rng: np.random.Generator,
                 use_se: bool = True, se_reduction: int = 4, use_coordconv: bool = True):
        super().__init__()
        self.levels = ModuleList([
            DecoderLevel(ch, dim, rng, use_se, se_reduction, use_coordconv)
            for ch in reversed(encoder_channels[1:])
        ])

    def forward(self, pyramid: FeaturePyramid) -> list[DecoderLevelOutput]:
        return self.decode(pyramid)

    def decode(self, pyramid: FeaturePyramid) -> list[DecoderLevelOutput]:
        skips = [pyramid.s32, pyramid.s16, pyramid.s8]
        outputs: list[DecoderLevelOutput] = []
        x_prev = x_mask_prev = None
        for idx, (level, skip) in enumerate(zip(self.levels, skips)):
            if x_prev is None:
                # deepest level: X' is the projected 1/32 skip itself
                x_s = level.skip_proj(skip)
                x = level.fuse_skip(x_s, x_s, projected=True)
            else:
                x = level.fuse_skip(F.bilinear_upsample2x(x_prev), skip)
            x_mask_up = F.bilinear_upsample2x(x_mask_prev) if x_mask_prev is not None else None
            x_mask = level.update_mask_features(x_mask_up, x)
            outputs.append(DecoderLevelOutput(x, x_mask, idx + 1))
            x_prev, x_mask_prev = x, x_mask
        return outputs
