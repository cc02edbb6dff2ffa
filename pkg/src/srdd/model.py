"""The full network: dictionary branch, predictor, reconstruction and chroma."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .chroma import ChromaNet
from .data import bicubic_upsample, rgb_to_ycbcr, ycbcr_to_rgb
from .dictionary import (Dictionary, DictionaryCode, DictionaryEncoder, DictionaryGenerator,
                         freeze, sample_noise, shuffle_atom_order)
from .nn import Module
from .predictor import Complementary, FeatureExtractor, PerPixelPredictor, expand_code
from .reconstruct import Fusion, merge_with_compensation, weighted_atom_sum


class NotFrozenError(RuntimeError):
    """Inference was requested before the dictionary was frozen."""


@dataclass
class ModelConfig:
    scale: int = 4
    n_atoms: int = 64
    feat_width: int = 64
    batch_norm: bool = True
    bottleneck_blocks: bool = True
    compensation: bool = True
    zero_head: bool = False     # start the softmax head at a uniform map
    n_blocks: int = 10
    chroma_widths: tuple[int, int] = (64, 32)
    noise_seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["chroma_widths"] = list(self.chroma_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "chroma_widths" in d:
            d["chroma_widths"] = tuple(d["chroma_widths"])
        known = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class ForwardResult:
    output: Tensor                  # (B, 3, sh, sw) YCbCr
    coeffs: Tensor                  # (B, N, h, w)
    coeffs_comp: Tensor | None      # (B, N, h-1, w-1)
    extras: dict = field(default_factory=dict)


class SRDD(Module):
    def __init__(self, config: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        c = config
        if c.compensation and c.scale % 2:
            raise ValueError("boundary compensation needs an even scale factor")
        self.config = c
        self.generator = DictionaryGenerator(c.scale, c.n_atoms, rng)
        self.encoder = DictionaryEncoder(c.scale, c.n_atoms, rng)
        self.extractor = FeatureExtractor(c.feat_width, rng, batch_norm=c.batch_norm)
        self.predictor = PerPixelPredictor(c.feat_width, c.n_atoms, rng, batch_norm=c.batch_norm,
                                           bottleneck_blocks=c.bottleneck_blocks, n_blocks=c.n_blocks)
        if c.zero_head:
            self.predictor.head.weight.data[...] = 0
        self.complementary = Complementary(c.n_atoms, rng) if c.compensation else None
        self.fusion = Fusion(rng) if c.compensation else None
        self.chroma = ChromaNet(c.scale, rng, c.chroma_widths)
        self.dictionary: Dictionary | None = None
        self.code: DictionaryCode | None = None

    @property
    def frozen(self) -> bool:
        return self.dictionary is not None and self.dictionary.frozen

    def generator_parameters(self) -> dict:
        return {f"generator.{k}": p for k, p in self.generator.named_parameters()}

    def main_parameters(self) -> dict:
        return {k: p for k, p in self.named_parameters() if not k.startswith("generator.")}

    # -------------------------------------------------------------- dictionary

    def freeze_dictionary(self) -> None:
        self.dictionary, self.code = freeze(self.generator, self.encoder, self.config.noise_seed)

    def refresh_code(self) -> None:
        """Re-encode the frozen atoms with the current encoder weights."""
        if not self.frozen:
            raise NotFrozenError("no frozen dictionary to encode")
        with ag.no_grad():
            self.code = DictionaryCode(self.encoder(Tensor(self.dictionary.atoms)).data.copy())

    def dictionary_tensors(self, noise: Tensor | None = None,
                           perm: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
        """Atoms and code for one training step.

        Before the freeze the generator runs on ``noise`` (fixed-seed noise
        when omitted); afterwards the frozen atoms are used and only the
        encoder stays live.
        """
        if self.frozen:
            atoms = Tensor(self.dictionary.atoms)
        else:
            if noise is None:
                noise = sample_noise(self.config.scale, np.random.default_rng(self.config.noise_seed))
            atoms = self.generator(noise)
        if perm is not None:
            atoms = shuffle_atom_order(atoms, perm)
        return atoms, self.encoder(atoms)

    # ----------------------------------------------------------------- forward

    def forward(self, lr: Tensor, atoms: Tensor, code: Tensor) -> ForwardResult:
        """LR YCbCr (B, 3, h, w) -> HR YCbCr (B, 3, sh, sw)."""
        s = self.config.scale
        b, _, h, w = lr.shape
        base = Tensor(bicubic_upsample(lr.data, s))
        feats = self.extractor(lr)
        code_map = expand_code(code, h, w, b) if self.predictor.use_code else None
        coeffs = self.predictor(feats, code_map)
        residual = weighted_atom_sum(coeffs, atoms, s)
        coeffs_comp = None
        extras = {"x": residual}
        if self.config.compensation:
            coeffs_comp = self.complementary(coeffs)
            x_comp = weighted_atom_sum(coeffs_comp, atoms, s)
            extras["x_comp"] = x_comp
            residual = merge_with_compensation(residual, x_comp, s, self.fusion)
        chroma = self.chroma(_chroma_planes(lr))
        y = ag.add(_luma(base), residual)
        cbcr = ag.add(_chroma_planes(base), chroma)
        return ForwardResult(ag.concat_channels([y, cbcr]), coeffs, coeffs_comp, extras)

    # --------------------------------------------------------------- inference

    def predict(self, lr_ycc: np.ndarray, return_maps: bool = False):
        """Frozen-model inference on (B, 3, h, w) YCbCr arrays."""
        if not self.frozen or self.code is None:
            raise NotFrozenError("model must be frozen before inference")
        was_training = self.training
        self.eval()
        try:
            with ag.no_grad():
                res = self.forward(Tensor(lr_ycc), Tensor(self.dictionary.atoms), Tensor(self.code.code))
        finally:
            self.train(was_training)
        if return_maps:
            return res.output.data, res
        return res.output.data

    def super_resolve(self, rgb: np.ndarray, tile: int | None = None, margin: int | None = None) -> np.ndarray:
        """(3, h, w) RGB in [0, 1] -> (3, sh, sw) RGB, unclipped."""
        ycc = rgb_to_ycbcr(rgb)[None]
        if tile:
            out = predict_tiled(self, ycc, tile, margin)
        else:
            out = self.predict(ycc)
        return ycbcr_to_rgb(out[0])


def _luma(t: Tensor) -> Tensor:
    return ag.index_channels(t, [0])


def _chroma_planes(t: Tensor) -> Tensor:
    return ag.index_channels(t, [1, 2])


def receptive_margin(config: ModelConfig) -> int:
    """LR context a tile needs on each side for tiled output to match whole-image output.

    Extractor: 28 pixels including pooling alignment; one per 3x3 bottleneck
    conv; complementary 2x2 conv and 5x5 HR fusion conv one each; bicubic base
    two. Rounded up to a multiple of 4 so tiles stay on the pooling grid.
    """
    r = 28 + (config.n_blocks if config.bottleneck_blocks else 0) + 2 + 2
    return -(-r // 4) * 4


def predict_tiled(model: SRDD, lr_ycc: np.ndarray, tile: int, margin: int | None = None) -> np.ndarray:
    """Run :meth:`SRDD.predict` tile by tile over the LR grid.

    Each tile is processed with ``margin`` LR pixels of context per side
    (default :func:`receptive_margin`); only its core is kept. Tile size and
    margin are rounded up to multiples of 4.
    """
    s = model.config.scale
    b, _, h, w = lr_ycc.shape
    tile = -(-tile // 4) * 4
    margin = receptive_margin(model.config) if margin is None else -(-margin // 4) * 4
    out = np.zeros((b, 3, s * h, s * w), dtype=np.float32)
    for y0 in range(0, h, tile):
        for x0 in range(0, w, tile):
            y1, x1 = min(h, y0 + tile), min(w, x0 + tile)
            ey0, ex0 = max(0, y0 - margin), max(0, x0 - margin)
            ey1, ex1 = min(h, y1 + margin), min(w, x1 + margin)
            piece = model.predict(lr_ycc[:, :, ey0:ey1, ex0:ex1])
            oy, ox = s * (y0 - ey0), s * (x0 - ex0)
            out[:, :, s * y0:s * y1, s * x0:s * x1] = piece[:, :, oy:oy + s * (y1 - y0), ox:ox + s * (x1 - x0)]
    return out
