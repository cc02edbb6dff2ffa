"""Shallow sub-pixel network for the Cb/Cr planes."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .nn import Conv2d, Module

MIN_SIDE = 5


class ChromaNet(Module):
    """5x5 -> 3x3 -> 3x3 convs (64, 32, 2*s*s wide), ReLU between, pixel shuffle by s."""

    def __init__(self, scale: int, rng: np.random.Generator, widths: tuple[int, int] = (64, 32)):
        self.scale = scale
        w1, w2 = widths
        self.c1 = Conv2d(2, w1, 5, rng, padding=2)
        self.c2 = Conv2d(w1, w2, 3, rng, padding=1)
        self.c3 = Conv2d(w2, 2 * scale * scale, 3, rng, padding=1)
        # start as a no-op on top of the bicubic chroma base
        self.c3.weight.data[...] = 0

    def forward(self, cbcr: Tensor) -> Tensor:
        """(B, 2, h, w) -> (B, 2, s*h, s*w)."""
        h, w = cbcr.shape[-2:]
        if cbcr.shape[1] != 2:
            raise ag.ShapeError(f"chroma input needs 2 channels, got {cbcr.shape[1]}")
        if h < MIN_SIDE or w < MIN_SIDE:
            raise ag.ShapeError(f"chroma input {h}x{w} too small; both sides must be >= {MIN_SIDE}")
        x = ag.relu(self.c1(cbcr))
        x = ag.relu(self.c2(x))
        return ag.pixel_shuffle(self.c3(x), self.scale)


def upscale_chroma(net: ChromaNet, cbcr: Tensor) -> Tensor:
    return net(cbcr)
