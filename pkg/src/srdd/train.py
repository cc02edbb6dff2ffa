"""Training loop: L1 loss, two Adam groups, milestone halving, freeze and shuffle.

All event iterations are fractions of ``total_iters``; the defaults reproduce
the 400k-iteration schedule exactly and scale linearly for shorter runs.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .checkpoint import load_model, save_model
from .data import DegradationSpec, ImageDataset, rgb_to_ycbcr, sample_batch, ycbcr_to_rgb
from .dictionary import sample_noise, shuffle_permutation
from .metrics import psnr_y
from .model import SRDD, ModelConfig
from .optim import Adam

logger = logging.getLogger(__name__)


class NumericError(RuntimeError):
    """Loss or gradients went non-finite."""


@dataclass
class TrainConfig:
    total_iters: int = 20_000
    batch_size: int = 32
    patch: int = 48
    lr_main: float = 2e-4
    lr_gen: float = 5e-3
    milestones_main: tuple[float, ...] = (0.5, 0.75, 0.875, 0.9375)
    milestones_gen: tuple[float, ...] = (0.125, 0.25, 0.5, 0.75, 0.875)
    gen_freeze_ratio: float = 0.9
    atom_shuffle_ratio: float = 0.0025
    seed: int = 0
    batch_norm: bool = True
    bottleneck_blocks: bool = True
    compensation: bool = True
    zero_head: bool = False
    scale: int = 4
    n_atoms: int = 64
    feat_width: int = 64
    kernel: str = "bicubic-aa"
    train_dir: str = ""
    val_dir: str = ""
    out_dir: str = "runs/srdd"
    val_every: int = 0          # 0 -> total_iters // 200
    checkpoint_every: int = 0   # 0 -> only the final checkpoint
    grad_clip: float = 0.0      # 0 -> off
    augment: bool = True

    def __post_init__(self):
        self.milestones_main = tuple(self.milestones_main)
        self.milestones_gen = tuple(self.milestones_gen)
        for name in ("milestones_main", "milestones_gen"):
            r = getattr(self, name)
            if any(not 0 < x < 1 for x in r) or any(b <= a for a, b in zip(r, r[1:])):
                raise ValueError(f"{name} must be strictly increasing ratios in (0, 1), got {r}")

    def model_config(self) -> ModelConfig:
        return ModelConfig(scale=self.scale, n_atoms=self.n_atoms, feat_width=self.feat_width,
                           batch_norm=self.batch_norm, bottleneck_blocks=self.bottleneck_blocks,
                           compensation=self.compensation, zero_head=self.zero_head,
                           noise_seed=self.seed)

    @property
    def validation_interval(self) -> int:
        return self.val_every or max(1, self.total_iters // 200)

    def event_iter(self, ratio: float) -> int:
        return int(round(ratio * self.total_iters))

    @property
    def freeze_iter(self) -> int:
        return self.event_iter(self.gen_freeze_ratio)

    @property
    def shuffle_cutoff(self) -> int:
        return self.event_iter(self.atom_shuffle_ratio)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["milestones_main"] = list(self.milestones_main)
        d["milestones_gen"] = list(self.milestones_gen)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def load_config(path: str | os.PathLike, overrides: dict | None = None) -> TrainConfig:
    """Read a TOML config; a ``[degradation]`` table may carry ``kernel`` and ``scale``."""
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    flat = {k: v for k, v in raw.items() if not isinstance(v, dict)}
    for table in raw.values():
        if isinstance(table, dict):
            flat.update(table)
    flat.update(overrides or {})
    return TrainConfig.from_dict(flat)


def lr_at(config: TrainConfig, group: str, iteration: int) -> float:
    """Learning rate of ``group`` ('main' or 'gen') at ``iteration``; 0 once the generator is frozen."""
    if group == "main":
        base, ratios = config.lr_main, config.milestones_main
    elif group == "gen":
        if iteration >= config.freeze_iter:
            return 0.0
        base, ratios = config.lr_gen, config.milestones_gen
    else:
        raise ValueError(f"unknown parameter group {group!r}")
    passed = sum(iteration >= config.event_iter(r) for r in ratios)
    return base * 0.5 ** passed


@dataclass
class TrainState:
    config: TrainConfig
    model: SRDD
    opt_main: Adam
    opt_gen: Adam
    rng: np.random.Generator
    iteration: int = 0
    val_history: list[tuple[int, float]] = field(default_factory=list)
    loss_history: list[float] = field(default_factory=list)


def new_state(config: TrainConfig) -> TrainState:
    model = SRDD(config.model_config(), seed=config.seed)
    return TrainState(
        config=config,
        model=model,
        opt_main=Adam(model.main_parameters(), config.lr_main),
        opt_gen=Adam(model.generator_parameters(), config.lr_gen),
        rng=np.random.default_rng(config.seed),
    )


def l1_loss(pred: Tensor, gt: Tensor) -> Tensor:
    return ag.l1_loss(pred, gt)


def validate(model: SRDD, valset: ImageDataset) -> float:
    """Mean PSNR-Y (border = scale) over the validation images."""
    s = model.config.scale
    if model.frozen:
        model.refresh_code()
    scores = []
    was_training = model.training
    model.eval()
    try:
        with ag.no_grad():
            atoms, code = model.dictionary_tensors()
            for sample in valset.samples:
                lr = Tensor(rgb_to_ycbcr(sample.lr)[None])
                out = model(lr, atoms, code).output.data[0]
                scores.append(psnr_y(np.clip(ycbcr_to_rgb(out), 0, 1), sample.hr, s))
    finally:
        model.train(was_training)
    return float(np.mean(scores))


def bicubic_baseline(valset: ImageDataset) -> float:
    from .data import bicubic_upsample
    s = valset.spec.scale
    return float(np.mean([psnr_y(np.clip(bicubic_upsample(x.lr, s), 0, 1), x.hr, s) for x in valset.samples]))


def _grad_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))


def train_step(state: TrainState, dataset: ImageDataset) -> float:
    cfg, model, rng, it = state.config, state.model, state.rng, state.iteration
    if it >= cfg.freeze_iter and not model.frozen:
        model.freeze_dictionary()
        logger.info("generator frozen at iteration %d", it)
    lr_main = lr_at(cfg, "main", it)
    lr_gen = lr_at(cfg, "gen", it)

    lr_np, hr_np = sample_batch(dataset, cfg.batch_size, cfg.patch, rng, cfg.augment)
    noise = None if model.frozen else sample_noise(cfg.scale, rng)
    perm = shuffle_permutation(cfg.n_atoms, it, cfg.shuffle_cutoff, rng) if it < cfg.shuffle_cutoff else None

    params = dict(model.named_parameters())
    ag.zero_grad(params.values())
    atoms, code = model.dictionary_tensors(noise, perm)
    res = model(Tensor(lr_np), atoms, code)
    loss = l1_loss(res.output, Tensor(hr_np))
    value = loss.item()
    grads = ag.backward(loss, params)
    gnorm = _grad_norm(grads)
    if not (math.isfinite(value) and math.isfinite(gnorm)):
        gen_norm = _grad_norm({k: g for k, g in grads.items() if k.startswith("generator.")})
        raise NumericError(
            f"non-finite loss at iteration {it}: loss={value} lr_main={lr_main} lr_gen={lr_gen} "
            f"grad_norm={gnorm} generator_grad_norm={gen_norm}")
    if cfg.grad_clip and gnorm > cfg.grad_clip:
        scale = cfg.grad_clip / gnorm
        grads = {k: g * scale for k, g in grads.items()}

    state.opt_main.step({k: grads[k] for k in state.opt_main.params if k in grads}, lr_main)
    if not model.frozen:
        state.opt_gen.step({k: grads[k] for k in state.opt_gen.params if k in grads}, lr_gen)
    state.iteration += 1
    state.loss_history.append(value)
    return value


def train(config: TrainConfig, dataset: ImageDataset, valset: ImageDataset | None = None,
          state: TrainState | None = None, stop_at: int | None = None,
          out_dir: str | os.PathLike | None = None) -> TrainState:
    """Run (or resume) the loop until ``stop_at`` (default ``total_iters``).

    When ``out_dir`` is set, appends ``iter loss lr_main lr_gen val_psnr``
    lines to ``train.log`` there and writes periodic and final checkpoints.
    """
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    state = state or new_state(config)
    stop = config.total_iters if stop_at is None else min(stop_at, config.total_iters)
    log = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log = open(out_dir / "train.log", "a", encoding="utf-8")
    try:
        while state.iteration < stop:
            it = state.iteration
            lr_main, lr_gen = lr_at(config, "main", it), lr_at(config, "gen", it)
            loss = train_step(state, dataset)
            val = "-"
            done = state.iteration
            if valset is not None and (done % config.validation_interval == 0 or done == config.total_iters):
                score = validate(state.model, valset)
                state.val_history.append((done, score))
                val = f"{score:.4f}"
                logger.info("iter %d loss %.5f val_psnr %.3f", done, loss, score)
            if log:
                log.write(f"{it} {loss:.6f} {lr_main:.6g} {lr_gen:.6g} {val}\n")
                log.flush()
            if out_dir is not None and config.checkpoint_every and done % config.checkpoint_every == 0:
                save_state(state, out_dir / f"ckpt_{done:07d}.srdd")
        if state.iteration == config.total_iters:
            if not state.model.frozen:
                state.model.freeze_dictionary()
            state.model.refresh_code()
            if out_dir is not None:
                save_state(state, out_dir / "final.srdd")
    finally:
        if log:
            log.close()
    return state


# ------------------------------------------------------------------ persistence


def save_state(state: TrainState, path: str | os.PathLike) -> None:
    meta = {
        "train": {
            "config": state.config.to_dict(),
            "iteration": state.iteration,
            "adam_t": {"main": state.opt_main.t, "gen": state.opt_gen.t},
            "rng": state.rng.bit_generator.state,
            "val_history": state.val_history,
        }
    }
    if state.model.frozen:
        state.model.refresh_code()
    extra = {}
    extra.update(state.opt_main.state("optim.main"))
    extra.update(state.opt_gen.state("optim.gen"))
    save_model(path, state.model, meta, extra)


def load_state(path: str | os.PathLike) -> TrainState:
    model, meta, tensors = load_model(path)
    tm = meta["train"]
    config = TrainConfig.from_dict(tm["config"])
    opt_main = Adam(model.main_parameters(), config.lr_main)
    opt_gen = Adam(model.generator_parameters(), config.lr_gen)
    opt_main.load_state("optim.main", tensors, tm["adam_t"]["main"])
    opt_gen.load_state("optim.gen", tensors, tm["adam_t"]["gen"])
    rng = np.random.default_rng()
    rng.bit_generator.state = tm["rng"]
    return TrainState(config, model, opt_main, opt_gen, rng, tm["iteration"],
                      [tuple(v) for v in tm["val_history"]])


def parameter_digest(model: SRDD, prefix: str = "") -> str:
    import hashlib
    h = hashlib.sha256()
    for name, p in model.named_parameters():
        if name.startswith(prefix):
            h.update(name.encode())
            h.update(p.data.tobytes())
    return h.hexdigest()

