"""Luma PSNR / SSIM with border exclusion, coefficient sparsity, eval reports."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import correlate2d

from .data import rgb_to_y, to_uint8


class MetricError(ValueError):
    pass


def luma_8bit(rgb: np.ndarray) -> np.ndarray:
    """Y on the 8-bit grid, computed from 8-bit-rounded RGB; returned in [0, 1]."""
    rgb8 = to_uint8(rgb).astype(np.float64) / 255.0
    return np.round(rgb_to_y(rgb8) * 255.0) / 255.0


def _crop(a: np.ndarray, b: np.ndarray, border: int) -> tuple[np.ndarray, np.ndarray]:
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch {a.shape} vs {b.shape}")
    h, w = a.shape[-2:]
    if border < 0 or 2 * border >= min(h, w):
        raise MetricError(f"border {border} leaves nothing of a {h}x{w} image")
    if border:
        a = a[..., border:h - border, border:w - border]
        b = b[..., border:h - border, border:w - border]
    return a, b


def psnr(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(data_range ** 2 / mse)


def psnr_y(sr: np.ndarray, gt: np.ndarray, border: int, quantized: bool = True) -> float:
    """PSNR on luma of two (3, H, W) RGB images; ``inf`` when identical."""
    ys, yg = (luma_8bit(sr), luma_8bit(gt)) if quantized else (rgb_to_y(sr), rgb_to_y(gt))
    ys, yg = _crop(ys, yg, border)
    return psnr(ys, yg)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0, window: np.ndarray | None = None,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Single-scale SSIM of two 2-D images, Gaussian window, valid positions only."""
    win = gaussian_window() if window is None else window
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2

    def filt(x):
        return correlate2d(x, win, mode="valid")

    mu_a, mu_b = filt(a), filt(b)
    saa = filt(a * a) - mu_a ** 2
    sbb = filt(b * b) - mu_b ** 2
    sab = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


def ssim_y(sr: np.ndarray, gt: np.ndarray, border: int, quantized: bool = True) -> float:
    ys, yg = (luma_8bit(sr), luma_8bit(gt)) if quantized else (rgb_to_y(sr), rgb_to_y(gt))
    ys, yg = _crop(ys, yg, border)
    return ssim(ys, yg)


def sparsity_histogram(coeffs: np.ndarray, threshold: float = 1e-2) -> np.ndarray:
    """Per-pixel count of coefficients above ``threshold`` (channel axis = -3)."""
    return (np.asarray(coeffs) > threshold).sum(axis=-3)


@dataclass
class ImageScore:
    name: str
    psnr: float
    ssim: float


@dataclass
class EvalReport:
    scores: list[ImageScore] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, name: str, psnr_db: float, ssim_val: float) -> None:
        self.scores.append(ImageScore(name, psnr_db, ssim_val))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([s.psnr for s in self.scores])) if self.scores else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([s.ssim for s in self.scores])) if self.scores else math.nan

    def to_text(self) -> str:
        """Metadata as ``# key: value`` lines, one tab-separated row per image, mean footer."""
        lines = [f"# {k}: {v}" for k, v in self.metadata.items()]
        lines.append("image\tpsnr_db\tssim")
        lines += [f"{s.name}\t{s.psnr:.4f}\t{s.ssim:.6f}" for s in self.scores]
        lines.append(f"mean\t{self.mean_psnr:.4f}\t{self.mean_ssim:.6f}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        report = cls()
        for line in text.splitlines():
            if line.startswith("# "):
                key, _, value = line[2:].partition(": ")
                report.metadata[key] = value
            elif line and not line.startswith(("image\t", "mean\t")):
                name, p, s = line.split("\t")
                report.add(name, float(p), float(s))
        return report


def evaluate(upscale, dataset, metadata: dict | None = None) -> EvalReport:
    """Score ``upscale(lr_rgb) -> sr_rgb`` on every image of an :class:`~srdd.data.ImageDataset`."""
    s = dataset.spec.scale
    report = EvalReport(metadata=dict(metadata or {}))
    report.metadata.setdefault("kernel", dataset.spec.kernel)
    report.metadata.setdefault("scale", s)
    for sample in dataset.samples:
        sr = np.clip(upscale(sample.lr), 0, 1)
        report.add(sample.name, psnr_y(sr, sample.hr, s), ssim_y(sr, sample.hr, s))
    return report
