"""Weighted-atom reconstruction, boundary compensation, output assembly."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import bicubic_upsample
from .nn import Conv2d, Module, Parameter

weighted_atom_sum = ag.weighted_atom_sum


def weighted_atom_sum_composed(coeffs: Tensor, atoms: Tensor, s: int) -> Tensor:
    """Same result built from primitives: upsample, tile, multiply, channel sum."""
    b, n, h, w = coeffs.shape
    up = ag.upsample_nearest(coeffs, s)
    tiled = ag.reshape(atoms, (1, n * s * s, 1, 1))
    tiled = ag.repeat_spatial(tiled, h, w, b)  # (B, N*s*s, h, w)
    # (B, N*s*s, h, w) -> (B, N, s*h, s*w) with atom k pasted into every s x s block
    tiled = ag.reshape(tiled, (b * n, s * s, h, w))
    tiled = ag.reshape(ag.pixel_shuffle(tiled, s), (b, n, h * s, w * s))
    return ag.sum_channels(ag.mul(up, tiled))


class Fusion(Module):
    """5x5 conv over [x overlap, x'] with padding 2, initialised to pass x through."""

    def __init__(self, rng: np.random.Generator | None = None):
        w = np.zeros((1, 2, 5, 5), dtype=np.float32)
        w[0, 0, 2, 2] = 1.0
        self.conv = Conv2d(2, 1, 5, rng or np.random.default_rng(0), padding=2)
        self.conv.weight = Parameter(w)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(x)


def merge_with_compensation(x: Tensor, x_comp: Tensor, s: int, fusion: Fusion) -> Tensor:
    """Fuse the half-block-shifted reconstruction into the interior of ``x``.

    ``x_comp`` covers ``x`` from offset (s/2, s/2) onward; that overlap is
    replaced by the fusion conv output and the s/2-wide border keeps ``x``.
    """
    if s % 2:
        raise ValueError(f"compensation needs an even scale, got {s}")
    b, _, hh, ww = x.shape
    half = s // 2
    ch, cw = x_comp.shape[-2:]
    if ch != hh - s or cw != ww - s or x_comp.shape[0] != b:
        raise ag.ShapeError(f"complementary output {x_comp.shape} inconsistent with {x.shape} at scale {s}")
    inner = ag.crop2d(x, half, half, ch, cw)
    fused = fusion(ag.concat_channels([inner, x_comp]))
    return ag.paste(x, fused, half, half)


def overlap_region(h: int, w: int, s: int) -> tuple[slice, slice]:
    """HR rows and columns covered by the complementary reconstruction."""
    half = s // 2
    return slice(half, s * h - half), slice(half, s * w - half)


@dataclass
class SrOutput:
    y: np.ndarray   # (B, 1, sh, sw)
    cb: np.ndarray
    cr: np.ndarray

    def ycbcr(self) -> np.ndarray:
        return np.concatenate([self.y, self.cb, self.cr], axis=1)


def compose_output(residual: np.ndarray, lr_luma: np.ndarray, chroma_hr: tuple[np.ndarray, np.ndarray],
                   s: int) -> SrOutput:
    """Add the luma residual to the bicubic-enlarged LR luma; chroma passes through."""
    base = bicubic_upsample(lr_luma, s)
    if base.shape != residual.shape:
        raise ag.ShapeError(f"residual {residual.shape} does not match upsampled luma {base.shape}")
    cb, cr = chroma_hr
    if cb.shape != base.shape or cr.shape != base.shape:
        raise ag.ShapeError("chroma planes must match the HR luma shape")
    return SrOutput(base + residual, cb, cr)
