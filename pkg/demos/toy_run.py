"""Build the toy dataset, train on it, and compare against bicubic.

    python3 demos/toy_run.py [--iters N] [--out runs/toy]

Needs scikit-image for the sample images (``pip install -e ".[toy]"``).
"""

from __future__ import annotations

import argparse
import logging
from dataclasses import replace
from pathlib import Path

from srdd.data import DegradationSpec, ImageDataset, write_png
from srdd.dictionary import atom_grid
from srdd.metrics import evaluate
from srdd.toy import build_toy
from srdd.train import bicubic_baseline, load_config, train

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "toy.toml"))
    ap.add_argument("--iters", type=int, default=None, help="override total_iters")
    ap.add_argument("--out", default="runs/toy")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    out = Path(args.out)
    train_dir, val_dir = build_toy(out / "data")
    cfg = replace(load_config(args.config), train_dir=str(train_dir), val_dir=str(val_dir), out_dir=str(out))
    if args.iters:
        cfg = replace(cfg, total_iters=args.iters)
    spec = DegradationSpec(cfg.kernel, cfg.scale)
    trainset, valset = ImageDataset(train_dir, spec), ImageDataset(val_dir, spec)

    state = train(cfg, trainset, valset, out_dir=out)
    model = state.model
    report = evaluate(model.super_resolve, valset)
    print(f"bicubic  {bicubic_baseline(valset):.3f} dB")
    print(f"model    {report.mean_psnr:.3f} dB   ssim {report.mean_ssim:.4f}")
    write_png(out / "atoms.png", atom_grid(model.dictionary.atoms))
    sample = valset.samples[0]
    write_png(out / f"{sample.name}_sr.png", model.super_resolve(sample.lr).clip(0, 1))
    print(f"log, checkpoint, atoms and the upscaled held-out image are in {out}")


if __name__ == "__main__":
    main()
