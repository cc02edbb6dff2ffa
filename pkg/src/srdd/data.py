"""Colour conversion, resampling, patch sampling and the on-disk dataset.

Images inside the pipeline are float arrays in [0, 1] laid out (C, H, W).
Resampling follows the imresize convention: output pixel ``x`` (1-based) sits
at input coordinate ``x/scale + 0.5*(1 - 1/scale)``, rows are normalized to
sum to one, and out-of-range taps reflect symmetrically.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from PIL import Image

KERNELS = ("bicubic-aa", "bicubic-plain", "bilinear-plain", "area")

# BT.601 studio swing, inputs and outputs scaled to [0, 1].
_YCBCR_MATRIX = np.array([
    [65.481, 128.553, 24.966],
    [-37.797, -74.203, 112.0],
    [112.0, -93.786, -18.214],
]) / 255.0
_YCBCR_OFFSET = np.array([16.0, 128.0, 128.0]) / 255.0
_RGB_MATRIX = np.linalg.inv(_YCBCR_MATRIX)


class DataError(ValueError):
    """Bad image, dataset layout or degradation request."""


# ---------------------------------------------------------------------- colour


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    """(3, H, W) RGB in [0, 1] -> (3, H, W) YCbCr in [0, 1] (Y spans 16/255..235/255)."""
    out = np.tensordot(_YCBCR_MATRIX, rgb.astype(np.float64), axes=(1, 0))
    out += _YCBCR_OFFSET[:, None, None]
    return out.astype(rgb.dtype if rgb.dtype == np.float64 else np.float32)


def ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    shifted = ycc.astype(np.float64) - _YCBCR_OFFSET[:, None, None]
    out = np.tensordot(_RGB_MATRIX, shifted, axes=(1, 0))
    return out.astype(ycc.dtype if ycc.dtype == np.float64 else np.float32)


def rgb_to_y(rgb: np.ndarray) -> np.ndarray:
    """Luma only, (3, H, W) -> (H, W)."""
    return np.tensordot(_YCBCR_MATRIX[0], rgb.astype(np.float64), axes=(0, 0)) + _YCBCR_OFFSET[0]


def quantize(img: np.ndarray) -> np.ndarray:
    """Round a [0, 1] float image to the 8-bit grid, keeping floats."""
    return (np.clip(np.round(img * 255.0), 0, 255) / 255.0).astype(np.float32)


# ------------------------------------------------------------------ resampling


def cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys cubic convolution kernel, support [-2, 2]."""
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax <= 2, far, 0.0))


def triangle(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    return np.where(ax <= 1, 1 - ax, 0.0)


def box(x: np.ndarray) -> np.ndarray:
    return ((x >= -0.5) & (x < 0.5)).astype(np.float64)


_KERNEL_TABLE: dict[str, tuple[Callable, float, bool]] = {
    "bicubic-aa": (cubic, 4.0, True),
    "bicubic-plain": (cubic, 4.0, False),
    "bilinear-plain": (triangle, 2.0, False),
    "area": (box, 1.0, True),
}


def resize_weights(in_len: int, out_len: int, scale: float, kernel: Callable, width: float,
                   antialias: bool) -> np.ndarray:
    """Dense (out_len, in_len) interpolation matrix, float64."""
    if scale < 1 and antialias:
        def h(x):
            return scale * kernel(scale * x)
        width = width / scale
    else:
        h = kernel
    x = np.arange(1, out_len + 1, dtype=np.float64)
    u = x / scale + 0.5 * (1 - 1 / scale)
    left = np.floor(u - width / 2)
    taps = int(np.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    wts = h(u[:, None] - idx)
    wts /= wts.sum(axis=1, keepdims=True)
    # symmetric reflection of 1-based indices into [1, in_len]
    period = 2 * in_len
    m = np.mod(idx - 1, period)
    src = np.where(m < in_len, m, period - 1 - m).astype(np.intp)
    mat = np.zeros((out_len, in_len))
    np.add.at(mat, (np.repeat(np.arange(out_len), taps), src.reshape(-1)), wts.reshape(-1))
    return mat


def _apply(img: np.ndarray, mat_h: np.ndarray, mat_w: np.ndarray) -> np.ndarray:
    x = img.astype(np.float64)
    x = np.einsum("oh,...hw->...ow", mat_h, x)
    x = np.einsum("pw,...hw->...hp", mat_w, x)
    return x


def kernel_weights(kernel: str, scale: float, in_len: int, out_len: int) -> np.ndarray:
    fn, width, aa = _KERNEL_TABLE[kernel]
    return resize_weights(in_len, out_len, scale, fn, width, aa)


@dataclass(frozen=True)
class DegradationSpec:
    kernel: str = "bicubic-aa"
    scale: int = 4

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise DataError(f"unknown kernel {self.kernel!r}; expected one of {KERNELS}")
        if int(self.scale) != self.scale or self.scale < 1:
            raise DataError(f"scale must be a positive integer, got {self.scale}")


def modcrop(img: np.ndarray, s: int) -> np.ndarray:
    h, w = img.shape[-2:]
    return img[..., : h - h % s, : w - w % s]


def downsample(img: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Shrink a (..., H, W) image by ``spec.scale``; H and W must be multiples of it."""
    s = spec.scale
    h, w = img.shape[-2:]
    if h % s or w % s:
        raise DataError(f"image {h}x{w} not divisible by scale {s}; modcrop first")
    if spec.kernel == "area":
        x = img.astype(np.float64).reshape(img.shape[:-2] + (h // s, s, w // s, s))
        out = x.mean(axis=(-3, -1))
    else:
        out = _apply(img, kernel_weights(spec.kernel, 1 / s, h, h // s),
                     kernel_weights(spec.kernel, 1 / s, w, w // s))
    return out.astype(np.float32)


def bicubic_upsample(img: np.ndarray, s: int) -> np.ndarray:
    """Enlarge a (..., h, w) image s times with the a=-0.5 cubic kernel."""
    h, w = img.shape[-2:]
    out = _apply(img, resize_weights(h, h * s, s, cubic, 4.0, False),
                 resize_weights(w, w * s, s, cubic, 4.0, False))
    return out.astype(img.dtype if img.dtype == np.float64 else np.float32)


def resample(img: np.ndarray, spec: DegradationSpec, direction: str = "down") -> np.ndarray:
    if direction == "down":
        return downsample(img, spec)
    if direction == "up":
        if spec.kernel == "area":
            return np.repeat(np.repeat(img, spec.scale, axis=-2), spec.scale, axis=-1).astype(np.float32)
        fn, width, _ = _KERNEL_TABLE[spec.kernel]
        h, w = img.shape[-2:]
        s = spec.scale
        return _apply(img, resize_weights(h, h * s, s, fn, width, False),
                      resize_weights(w, w * s, s, fn, width, False)).astype(np.float32)
    raise ValueError(f"direction must be 'down' or 'up', got {direction!r}")


# --------------------------------------------------------------------- patches


@dataclass
class PatchPair:
    lr: np.ndarray  # (3, p, p)
    hr: np.ndarray  # (3, s*p, s*p)


def sample_patch_pair(hr: np.ndarray, lr: np.ndarray, p: int, s: int, rng: np.random.Generator) -> PatchPair:
    lh, lw = lr.shape[-2:]
    if lh < p or lw < p:
        raise DataError(f"LR image {lh}x{lw} smaller than patch size {p}")
    if hr.shape[-2:] != (lh * s, lw * s):
        raise DataError(f"HR {hr.shape[-2:]} is not {s}x LR {lr.shape[-2:]}")
    i = int(rng.integers(0, lh - p + 1))
    j = int(rng.integers(0, lw - p + 1))
    return PatchPair(lr[:, i:i + p, j:j + p].copy(), hr[:, s * i:s * (i + p), s * j:s * (j + p)].copy())


def dihedral(img: np.ndarray, k: int) -> np.ndarray:
    """One of the 8 square symmetries: k%4 quarter turns, then a flip if k >= 4."""
    out = np.rot90(img, k % 4, axes=(-2, -1))
    if k >= 4:
        out = out[..., ::-1]
    return np.ascontiguousarray(out)


def augment(pair: PatchPair, rng: np.random.Generator) -> PatchPair:
    k = int(rng.integers(0, 8))
    return PatchPair(dihedral(pair.lr, k), dihedral(pair.hr, k))


# ------------------------------------------------------------------------- I/O


def read_png(path: str | os.PathLike) -> np.ndarray:
    """Load an image as (3, H, W) float32 RGB in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    return (arr.transpose(2, 0, 1).astype(np.float32) / 255.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def write_png(path: str | os.PathLike, img: np.ndarray) -> None:
    """Write a (3, H, W) or (H, W) [0, 1] float image as 8-bit PNG."""
    arr = to_uint8(img)
    if arr.ndim == 3:
        arr = arr.transpose(1, 2, 0)
    Image.fromarray(arr).save(path, format="PNG")


INDEX_NAME = "index.txt"


def list_images(root: str | os.PathLike) -> list[Path]:
    """Paths from ``index.txt`` (one relative path per line) or, failing that, every PNG."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    index = root / INDEX_NAME
    if index.exists():
        lines = index.read_text(encoding="utf-8").splitlines()
        paths = [root / ln.strip() for ln in lines if ln.strip() and not ln.startswith("#")]
    else:
        paths = sorted(root.glob("*.png"))
    if not paths:
        raise DataError(f"no images listed in {root}")
    for p in paths:
        if not p.exists():
            raise FileNotFoundError(f"dataset image missing: {p}")
    return paths


def write_index(root: str | os.PathLike, names: Sequence[str]) -> None:
    Path(root, INDEX_NAME).write_text("".join(f"{n}\n" for n in names), encoding="utf-8")


@dataclass
class Sample:
    name: str
    hr: np.ndarray  # RGB, modcropped
    lr: np.ndarray  # RGB, degraded and 8-bit quantized


class ImageDataset:
    """HR images from disk, LR made on load from a degradation spec."""

    def __init__(self, root: str | os.PathLike, spec: DegradationSpec, quantize_lr: bool = True):
        self.root = Path(root)
        self.spec = spec
        self.samples: list[Sample] = []
        for path in list_images(root):
            hr = modcrop(read_png(path), spec.scale)
            lr = downsample(hr, spec)
            if quantize_lr:
                lr = quantize(lr)
            self.samples.append(Sample(path.stem, hr, np.clip(lr, 0, 1)))

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i: int) -> Sample:
        return self.samples[i]


def sample_batch(dataset: ImageDataset, batch: int, p: int, rng: np.random.Generator,
                 augment_pairs: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Sample with replacement: LR (B, 3, p, p) and HR (B, 3, sp, sp), both YCbCr."""
    s = dataset.spec.scale
    lrs, hrs = [], []
    for _ in range(batch):
        sample = dataset[int(rng.integers(0, len(dataset)))]
        pair = sample_patch_pair(sample.hr, sample.lr, p, s, rng)
        if augment_pairs:
            pair = augment(pair, rng)
        lrs.append(rgb_to_ycbcr(pair.lr))
        hrs.append(rgb_to_ycbcr(pair.hr))
    return np.stack(lrs), np.stack(hrs)
