"""High-resolution dictionary: tree generator, encoder, and the frozen pair.

The generator is a binary tree. Each internal node runs two 1x1 convs with
ReLU and hands its output to two children; after ``depth`` levels the
``2**depth`` leaves each emit one s x s atom through a 1x1 conv, tanh and a
pixel shuffle. Nodes on the same level are evaluated together as one
grouped 1x1 conv, so level ``l`` stores the parameters of its ``2**l`` nodes
stacked along the output-channel axis (node ``g`` owns output channels
``g*s*s .. (g+1)*s*s``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .nn import Conv2d, Module


def tree_depth(n_atoms: int) -> int:
    """Depth of the generator producing ``n_atoms`` leaves (log2 of the count)."""
    if n_atoms < 2 or n_atoms & (n_atoms - 1):
        raise ValueError(f"atom count must be a power of two >= 2, got {n_atoms}")
    return int(math.log2(n_atoms))


def sample_noise(s: int, rng: np.random.Generator) -> Tensor:
    """Standard-normal generator input of shape (1, s*s, 1, 1)."""
    if s < 2:
        raise ValueError(f"scale must be >= 2, got {s}")
    return Tensor(rng.standard_normal((1, s * s, 1, 1)).astype(np.float32))


class _TreeLevel(Module):
    def __init__(self, nodes: int, width: int, rng: np.random.Generator):
        c = nodes * width
        self.conv_a = Conv2d(c, c, 1, rng, groups=nodes)
        self.conv_b = Conv2d(c, c, 1, rng, groups=nodes)

    def forward(self, x: Tensor) -> Tensor:
        return ag.relu(self.conv_b(ag.relu(self.conv_a(x))))


def _fork_index(nodes: int, width: int) -> np.ndarray:
    base = np.arange(nodes * width).reshape(nodes, 1, width)
    return np.repeat(base, 2, axis=1).reshape(-1)


class DictionaryGenerator(Module):
    def __init__(self, scale: int, n_atoms: int, rng: np.random.Generator):
        self.scale = scale
        self.n_atoms = n_atoms
        self.depth = tree_depth(n_atoms)
        width = scale * scale
        self.levels = [_TreeLevel(2 ** lvl, width, rng) for lvl in range(self.depth)]
        self.emit = Conv2d(n_atoms * width, n_atoms * width, 1, rng, groups=n_atoms)
        self._forks = [_fork_index(2 ** lvl, width) for lvl in range(self.depth)]

    @property
    def node_count(self) -> int:
        return 2 ** self.depth - 1

    def forward(self, noise: Tensor) -> Tensor:
        """Map noise (1, s*s, 1, 1) to atoms (N, s, s), leaves left to right."""
        s = self.scale
        if noise.shape != (1, s * s, 1, 1):
            raise ag.ShapeError(f"noise must be (1, {s * s}, 1, 1), got {noise.shape}")
        h = noise
        for level, fork in zip(self.levels, self._forks):
            h = ag.index_channels(level(h), fork)
        leaves = ag.tanh_act(self.emit(h))
        atoms = ag.pixel_shuffle(ag.reshape(leaves, (self.n_atoms, s * s, 1, 1)), s)
        return ag.reshape(atoms, (self.n_atoms, s, s))


class DictionaryEncoder(Module):
    """Collapse each atom to a scalar (grouped s x s conv), ReLU, then mix with a 1x1 conv."""

    def __init__(self, scale: int, n_atoms: int, rng: np.random.Generator):
        self.scale = scale
        self.n_atoms = n_atoms
        self.collapse = Conv2d(n_atoms, n_atoms, scale, rng, groups=n_atoms)
        self.mix = Conv2d(n_atoms, n_atoms, 1, rng)

    def forward(self, atoms: Tensor) -> Tensor:
        """Atoms (N, s, s) -> code (N, 1, 1)."""
        n, s = self.n_atoms, self.scale
        if atoms.shape != (n, s, s):
            raise ag.ShapeError(f"encoder expects atoms ({n}, {s}, {s}), got {atoms.shape}")
        x = ag.reshape(atoms, (1, n, s, s))
        code = self.mix(ag.relu(self.collapse(x)))
        return ag.reshape(code, (n, 1, 1))


@dataclass
class Dictionary:
    atoms: np.ndarray  # (N, s, s), values in [-1, 1]
    frozen: bool = False

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[0]

    @property
    def scale(self) -> int:
        return self.atoms.shape[1]


@dataclass
class DictionaryCode:
    code: np.ndarray  # (N, 1, 1)


def generate_atoms(gen: DictionaryGenerator, noise: Tensor) -> Dictionary:
    with ag.no_grad():
        return Dictionary(gen(noise).data.copy())


def encode_dictionary(encoder: DictionaryEncoder, dictionary: Dictionary) -> DictionaryCode:
    with ag.no_grad():
        return DictionaryCode(encoder(Tensor(dictionary.atoms)).data.copy())


def shuffle_permutation(n_atoms: int, iteration: int, cutoff: int, rng: np.random.Generator) -> np.ndarray:
    """Random atom order before ``cutoff``, identity from then on."""
    if iteration < cutoff:
        return rng.permutation(n_atoms)
    return np.arange(n_atoms)


def shuffle_atom_order(atoms: Tensor, perm: np.ndarray) -> Tensor:
    n, s, _ = atoms.shape
    flat = ag.reshape(atoms, (1, n, s, s))
    return ag.reshape(ag.index_channels(flat, perm), (n, s, s))


def freeze(gen: DictionaryGenerator, encoder: DictionaryEncoder, noise_seed: int) -> tuple[Dictionary, DictionaryCode]:
    """Capture the dictionary from fixed-seed noise and stop training the generator."""
    noise = sample_noise(gen.scale, np.random.default_rng(noise_seed))
    dictionary = generate_atoms(gen, noise)
    dictionary.frozen = True
    gen.requires_grad_(False)
    return dictionary, encode_dictionary(encoder, dictionary)


def atom_grid(atoms: np.ndarray, cols: int | None = None, separator: float = 1.0) -> np.ndarray:
    """Tile atoms row-major into one image, mapped from [-1, 1] to [0, 1], 1-pixel separators."""
    n, s, _ = atoms.shape
    cols = cols or 2 ** math.ceil(math.log2(n) / 2)
    rows = -(-n // cols)
    grid = np.full((rows * (s + 1) - 1, cols * (s + 1) - 1), separator, dtype=np.float32)
    for k in range(n):
        r, c = divmod(k, cols)
        grid[r * (s + 1):r * (s + 1) + s, c * (s + 1):c * (s + 1) + s] = (atoms[k] + 1) / 2
    return grid
