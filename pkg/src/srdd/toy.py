"""Toy dataset built from the sample images bundled with scikit-image (optional dependency)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import write_index, write_png

TRAIN = ["astronaut", "coffee", "rocket", "immunohistochemistry", "camera", "brick", "coins", "text"]
HELD_OUT = "chelsea"


def _load(name: str) -> np.ndarray:
    import skimage.data as sd
    img = np.asarray(getattr(sd, name)())
    if img.ndim == 2:
        img = np.stack([img] * 3, axis=-1)
    return img[..., :3].transpose(2, 0, 1).astype(np.float64) / 255.0


def _center_crop(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape[-2:]
    i, j = (h - size) // 2, (w - size) // 2
    return img[:, i:i + size, j:j + size]


def build_toy(root: str | Path, size: int = 128, val_size: int = 96) -> tuple[Path, Path]:
    """Write 8 training crops and one held-out crop as PNG folders; returns (train_dir, val_dir)."""
    root = Path(root)
    train_dir, val_dir = root / "train", root / "val"
    train_dir.mkdir(parents=True, exist_ok=True)
    val_dir.mkdir(parents=True, exist_ok=True)
    for name in TRAIN:
        write_png(train_dir / f"{name}.png", _center_crop(_load(name), size))
    write_index(train_dir, [f"{n}.png" for n in TRAIN])
    write_png(val_dir / f"{HELD_OUT}.png", _center_crop(_load(HELD_OUT), val_size))
    write_index(val_dir, [f"{HELD_OUT}.png"])
    return train_dir, val_dir
