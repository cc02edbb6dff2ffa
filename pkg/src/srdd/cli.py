"""Command line: ``srdd {train,infer,eval,export-atoms}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_model
from .data import KERNELS, DataError, DegradationSpec, ImageDataset, read_png, write_png
from .dictionary import atom_grid
from .metrics import evaluate
from .model import NotFrozenError
from .train import NumericError, bicubic_baseline, load_config, load_state, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _parse_override(text: str):
    key, sep, value = text.partition("=")
    if not sep:
        raise UsageError(f"--set expects key=value, got {text!r}")
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    try:
        parsed = tomllib.loads(f"v = {value}")["v"]
    except Exception:
        parsed = value
    return key.strip(), parsed


def cmd_train(args) -> int:
    overrides = dict(_parse_override(s) for s in args.set or [])
    config = load_config(args.config, overrides)
    out_dir = args.out_dir or config.out_dir
    dataset = ImageDataset(config.train_dir, DegradationSpec(config.kernel, config.scale))
    valset = ImageDataset(config.val_dir, DegradationSpec(config.kernel, config.scale)) if config.val_dir else None
    state = load_state(args.resume) if args.resume else None
    if valset is not None:
        logging.info("bicubic validation baseline %.3f dB", bicubic_baseline(valset))
    state = train(config, dataset, valset, state=state, out_dir=out_dir)
    print(f"trained {state.iteration} iterations; checkpoint in {Path(out_dir) / 'final.srdd'}")
    return EXIT_OK


def cmd_infer(args) -> int:
    model, _, _ = load_model(args.checkpoint)
    if not model.frozen:
        raise NotFrozenError(f"{args.checkpoint} holds an unfrozen dictionary; infer needs a frozen checkpoint")
    sr = model.super_resolve(read_png(args.input), tile=args.tile, margin=args.margin)
    write_png(args.output, np.clip(sr, 0, 1))
    return EXIT_OK


def cmd_eval(args) -> int:
    model, meta, _ = load_model(args.checkpoint)
    if not model.frozen:
        raise NotFrozenError(f"{args.checkpoint} holds an unfrozen dictionary; eval needs a frozen checkpoint")
    scale = model.config.scale
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for kernel in args.kernel or list(KERNELS):
        spec = DegradationSpec(kernel, scale)
        dataset = ImageDataset(args.dataset, spec)
        report = evaluate(model.super_resolve, dataset, {
            "dataset": str(args.dataset), "kernel": kernel, "scale": scale, "model": str(args.checkpoint)})
        path = out_dir / f"report_{kernel}.txt"
        path.write_text(report.to_text(), encoding="utf-8")
        print(f"{kernel}\tpsnr {report.mean_psnr:.3f}\tssim {report.mean_ssim:.4f}\t-> {path}")
    return EXIT_OK


def cmd_export_atoms(args) -> int:
    model, _, _ = load_model(args.checkpoint)
    if not model.frozen:
        raise NotFrozenError(f"{args.checkpoint} holds no frozen dictionary")
    write_png(args.output, atom_grid(model.dictionary.atoms, args.cols))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="srdd", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train from a TOML config")
    t.add_argument("config")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    t.add_argument("--resume", help="checkpoint to resume from")
    t.add_argument("--out-dir")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="super-resolve one PNG")
    i.add_argument("checkpoint")
    i.add_argument("input")
    i.add_argument("output")
    i.add_argument("--tile", type=int, default=0, help="LR tile size (0 = whole image)")
    i.add_argument("--margin", type=int, default=None, help="LR context per tile side")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="PSNR/SSIM-Y over a dataset under one or more degradations")
    e.add_argument("checkpoint")
    e.add_argument("dataset")
    e.add_argument("--kernel", action="append", choices=KERNELS,
                   help="degradation kernel (repeatable; default: all four)")
    e.add_argument("--out-dir", default=".")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export-atoms", help="write the frozen dictionary as a PNG grid")
    x.add_argument("checkpoint")
    x.add_argument("output")
    x.add_argument("--cols", type=int, default=None)
    x.set_defaults(func=cmd_export_atoms)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"srdd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"srdd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, DataError, CheckpointError, NotFrozenError, KeyError, ValueError) as exc:
        if isinstance(exc, FileNotFoundError) and exc.filename:
            msg = f"file not found: {exc.filename}"
        else:
            msg = str(exc)
        print(f"srdd: data error: {msg}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"srdd: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
