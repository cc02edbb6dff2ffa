"""Feature extraction and per-pixel coefficient prediction.

The extractor is a three-level UNet++ (two poolings) with nested dense skips
and a long skip from the stem conv to the last decoder node. Inputs whose
sides are not multiples of four are zero-padded at the bottom/right on entry
and cropped back after the long skip.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .nn import BatchNorm2d, Conv2d, ConvNormReLU, Identity, Module

MIN_SIDE = 8


class _Block(Module):
    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator, batch_norm: bool):
        self.a = ConvNormReLU(in_ch, out_ch, rng, batch_norm=batch_norm)
        self.b = ConvNormReLU(out_ch, out_ch, rng, batch_norm=batch_norm)

    def forward(self, x: Tensor) -> Tensor:
        return self.b(self.a(x))


class _Up(Module):
    """Nearest x2 upsample followed by conv-norm-ReLU."""

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator, batch_norm: bool):
        self.conv = ConvNormReLU(in_ch, out_ch, rng, batch_norm=batch_norm)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(ag.upsample_nearest(x, 2))


class FeatureExtractor(Module):
    def __init__(self, width: int, rng: np.random.Generator, batch_norm: bool = True, in_ch: int = 3):
        f = width
        self.width = f
        self.stem = Conv2d(in_ch, f, 3, rng, padding=1)
        self.x00 = _Block(f, f, rng, batch_norm)
        self.x10 = _Block(f, 2 * f, rng, batch_norm)
        self.x20 = _Block(2 * f, 4 * f, rng, batch_norm)
        self.up10 = _Up(2 * f, f, rng, batch_norm)
        self.up20 = _Up(4 * f, 2 * f, rng, batch_norm)
        self.up11 = _Up(2 * f, f, rng, batch_norm)
        self.x01 = _Block(2 * f, f, rng, batch_norm)
        self.x11 = _Block(4 * f, 2 * f, rng, batch_norm)
        self.x02 = _Block(3 * f, f, rng, batch_norm)

    def forward(self, img: Tensor) -> Tensor:
        """(B, 3, h, w) YCbCr -> (B, f, h, w)."""
        h, w = img.shape[-2:]
        if h < MIN_SIDE or w < MIN_SIDE:
            raise ag.ShapeError(f"input {h}x{w} too small; both sides must be >= {MIN_SIDE}")
        ph, pw = -h % 4, -w % 4
        x = ag.pad2d(img, 0, ph, 0, pw) if ph or pw else img

        stem = ag.relu(self.stem(x))
        x00 = self.x00(stem)
        x10 = self.x10(ag.max_pool2d(x00))
        x20 = self.x20(ag.max_pool2d(x10))
        x01 = self.x01(ag.concat_channels([x00, self.up10(x10)]))
        x11 = self.x11(ag.concat_channels([x10, self.up20(x20)]))
        x02 = self.x02(ag.concat_channels([x00, x01, self.up11(x11)]))
        out = ag.add(x02, stem)
        return ag.crop2d(out, 0, 0, h, w) if ph or pw else out


class Bottleneck(Module):
    """1x1 reduce, 3x3, 1x1 expand, residual add; norm before each ReLU."""

    def __init__(self, width: int, inner: int, rng: np.random.Generator, batch_norm: bool = True):
        self.reduce = ConvNormReLU(width, inner, rng, kernel=1, batch_norm=batch_norm)
        self.mid = ConvNormReLU(inner, inner, rng, kernel=3, batch_norm=batch_norm)
        self.expand = Conv2d(inner, width, 1, rng, bias=not batch_norm)
        self.norm = BatchNorm2d(width) if batch_norm else Identity()

    def forward(self, x: Tensor) -> Tensor:
        y = self.norm(self.expand(self.mid(self.reduce(x))))
        return ag.relu(ag.add(y, x))


class PerPixelPredictor(Module):
    """Bottleneck stack plus a 1x1 head and a channel softmax.

    With ``bottleneck_blocks=False`` the stack and the code injection are both
    dropped and the head reads the extracted features directly.
    """

    def __init__(self, feat_width: int, n_atoms: int, rng: np.random.Generator, batch_norm: bool = True,
                 bottleneck_blocks: bool = True, n_blocks: int = 10):
        self.n_atoms = n_atoms
        self.use_code = bottleneck_blocks
        width = feat_width + n_atoms if bottleneck_blocks else feat_width
        inner = max(1, feat_width // 2)
        self.blocks = [Bottleneck(width, inner, rng, batch_norm) for _ in range(n_blocks if bottleneck_blocks else 0)]
        self.head = Conv2d(width, n_atoms, 1, rng)

    def forward(self, features: Tensor, code_expanded: Tensor | None) -> Tensor:
        if self.use_code:
            if code_expanded is None or code_expanded.shape[-2:] != features.shape[-2:]:
                raise ag.ShapeError("expanded code must match the feature map's spatial size")
            x = ag.concat_channels([features, code_expanded])
        else:
            x = features
        for block in self.blocks:
            x = block(x)
        return ag.softmax_channels(self.head(x))


class Complementary(Module):
    """2x2 valid conv over the main map, then channel softmax."""

    def __init__(self, n_atoms: int, rng: np.random.Generator):
        self.conv = Conv2d(n_atoms, n_atoms, 2, rng)

    def forward(self, coeffs: Tensor) -> Tensor:
        h, w = coeffs.shape[-2:]
        if h < 2 or w < 2:
            raise ag.ShapeError(f"coefficient map {h}x{w} too small for the 2x2 complementary conv")
        return ag.softmax_channels(self.conv(coeffs))


def expand_code(code: Tensor, h: int, w: int, batch: int = 1) -> Tensor:
    """Tile an (N, 1, 1) code to (batch, N, h, w)."""
    n = code.shape[0]
    return ag.repeat_spatial(ag.reshape(code, (1, n, 1, 1)), h, w, batch)
