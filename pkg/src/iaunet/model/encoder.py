"""Small convolutional backbone producing the 1/4 .. 1/32 feature pyramid."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import BatchNorm2d, Conv2d, Module, ModuleList, ShapeError, Tensor
from ..core import functional as F


@dataclass
class FeaturePyramid:
    s4: Tensor
    s8: Tensor
    s16: Tensor
    s32: Tensor

    def levels(self) -> list[Tensor]:
        return [self.s4, self.s8, self.s16, self.s32]


class ConvBNReLU(Module):
    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator, stride: int = 1):
        super().__init__()
        self.conv = Conv2d(in_ch, out_ch, 3, rng, stride=stride, bias=False)
        self.bn = BatchNorm2d(out_ch)

    def forward(self, x):
        return F.relu(self.bn(self.conv(x)))


class Encoder(Module):
    """Stride-2 stem followed by four stride-2 stages; taps after each stage."""

    def __init__(self, in_channels: int, stem_channels: int, channels: tuple[int, ...],
                 rng: np.random.Generator):
        super().__init__()
        self.stem = ConvBNReLU(in_channels, stem_channels, rng, stride=2)
        self.stages = ModuleList()
        prev = stem_channels
        for ch in channels:
            self.stages.append(_Stage(prev, ch, rng))
            prev = ch

    def forward(self, image: Tensor) -> FeaturePyramid:
        if image.ndim != 4:
            raise ShapeError(f"encoder expects [N,C,H,W] images, got shape {image.shape}")
        h, w = image.shape[2:]
        if h % 32 or w % 32:
            raise ShapeError(f"image sides must be divisible by 32, got height {h} and width {w}")
        x = self.stem(image)
        taps = []
        for stage in self.stages:
            x = stage(x)
            taps.append(x)
        return FeaturePyramid(*taps)


class _Stage(Module):
    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator):
        super().__init__()
        self.down = ConvBNReLU(in_ch, out_ch, rng, stride=2)
        self.refine = ConvBNReLU(out_ch, out_ch, rng)

    def forward(self, x):
        return self.refine(self.down(x))
