import numpy as np
import pytest

from srdd import autograd as ag
from srdd.autograd import Tensor
from srdd.dictionary import (DictionaryEncoder, DictionaryGenerator, atom_grid, encode_dictionary, freeze,
                             generate_atoms, sample_noise, shuffle_atom_order, shuffle_permutation, tree_depth)


@pytest.mark.parametrize("s", [4, 8])
def test_noise_shape_and_determinism(s):
    a = sample_noise(s, np.random.default_rng(5))
    b = sample_noise(s, np.random.default_rng(5))
    assert a.shape == (1, s * s, 1, 1)
    np.testing.assert_array_equal(a.data, b.data)


def test_noise_rejects_scale_one():
    with pytest.raises(ValueError):
        sample_noise(1, np.random.default_rng(0))


@pytest.mark.parametrize("n", [2 ** k for k in range(1, 9)])
def test_depth_and_atom_count(n):
    gen = DictionaryGenerator(4, n, np.random.default_rng(n))
    assert gen.depth == tree_depth(n) == int(np.log2(n))
    assert len(gen.levels) == gen.depth
    assert gen.node_count == n - 1
    d = generate_atoms(gen, sample_noise(4, np.random.default_rng(1)))
    assert d.atoms.shape == (n, 4, 4)
    assert d.atoms.min() >= -1 and d.atoms.max() <= 1


@pytest.mark.parametrize("n", [0, 1, 3, 6, 100])
def test_non_power_of_two_rejected(n):
    with pytest.raises(ValueError):
        DictionaryGenerator(4, n, np.random.default_rng(0))


def test_atoms_bounded_under_extreme_parameters():
    gen = DictionaryGenerator(4, 8, np.random.default_rng(0))
    for p in gen.parameters():
        p.data *= 50
    d = generate_atoms(gen, Tensor(np.full((1, 16, 1, 1), 30.0, np.float32)))
    assert d.atoms.min() >= -1 and d.atoms.max() <= 1


def _node_reference(gen, noise):
    """Walk the tree node by node with plain numpy, the way the structure is defined."""
    s2 = gen.scale ** 2

    def node(level, g, x):
        lv = gen.levels[level]
        sl = slice(g * s2, (g + 1) * s2)
        wa, ba = lv.conv_a.weight.data[sl, :, 0, 0], lv.conv_a.bias.data[sl]
        wb, bb = lv.conv_b.weight.data[sl, :, 0, 0], lv.conv_b.bias.data[sl]
        h = np.maximum(wa.astype(np.float64) @ x + ba, 0)
        return np.maximum(wb @ h + bb, 0)

    leaves = [noise.data.reshape(-1).astype(np.float64)]
    for level in range(gen.depth):
        nxt = []
        for g, x in enumerate(leaves):
            y = node(level, g, x)
            nxt += [y, y]
        leaves = nxt
    atoms = []
    for k, x in enumerate(leaves):
        sl = slice(k * s2, (k + 1) * s2)
        e = np.tanh(gen.emit.weight.data[sl, :, 0, 0] @ x + gen.emit.bias.data[sl])
        atoms.append(e.reshape(gen.scale, gen.scale))  # pixel shuffle of s*s channels at 1x1
    return np.stack(atoms)


def test_generator_matches_per_node_tree_walk():
    gen = DictionaryGenerator(4, 16, np.random.default_rng(3))
    for p in gen.parameters():
        if p.ndim == 1:
            p.data[...] = np.random.default_rng(p.data.size).standard_normal(p.shape) * 0.1
    noise = sample_noise(4, np.random.default_rng(9))
    np.testing.assert_allclose(generate_atoms(gen, noise).atoms, _node_reference(gen, noise), atol=1e-5)


def test_siblings_differ_only_through_their_own_parameters():
    # the two children of a node receive the same input, so equal child parameters give equal atoms
    gen = DictionaryGenerator(4, 4, np.random.default_rng(0))
    s2 = 16
    for conv in (gen.levels[1].conv_a, gen.levels[1].conv_b):
        conv.weight.data[s2:2 * s2] = conv.weight.data[:s2]
        conv.bias.data[s2:2 * s2] = conv.bias.data[:s2]
    gen.emit.weight.data[s2:2 * s2] = gen.emit.weight.data[:s2]
    atoms = generate_atoms(gen, sample_noise(4, np.random.default_rng(1))).atoms
    np.testing.assert_array_equal(atoms[0], atoms[1])
    assert not np.array_equal(atoms[0], atoms[2])


@pytest.mark.parametrize("s,n", [(4, 128), (4, 8), (8, 16), (2, 2)])
def test_encoder_code_shape(s, n):
    enc = DictionaryEncoder(s, n, np.random.default_rng(0))
    gen = DictionaryGenerator(s, n, np.random.default_rng(1))
    code = encode_dictionary(enc, generate_atoms(gen, sample_noise(s, np.random.default_rng(2))))
    assert code.code.shape == (n, 1, 1)


def test_zero_dictionary_zero_biases_gives_zero_code():
    enc = DictionaryEncoder(4, 8, np.random.default_rng(0))
    from srdd.dictionary import Dictionary
    code = encode_dictionary(enc, Dictionary(np.zeros((8, 4, 4), np.float32)))
    np.testing.assert_array_equal(code.code, 0)


def test_encoder_collapses_each_atom_independently():
    enc = DictionaryEncoder(4, 8, np.random.default_rng(0))
    atoms = np.random.default_rng(1).uniform(-1, 1, (8, 4, 4)).astype(np.float32)
    w, b = enc.collapse.weight.data, enc.collapse.bias.data
    scal = np.maximum((w[:, 0] * atoms).sum(axis=(1, 2)) + b, 0)
    ref = enc.mix.weight.data[:, :, 0, 0] @ scal + enc.mix.bias.data
    with ag.no_grad():
        got = enc(Tensor(atoms)).data.reshape(-1)
    np.testing.assert_allclose(got, ref, rtol=1e-5, atol=1e-6)


def test_shuffle_permutation():
    rng = np.random.default_rng(0)
    p = shuffle_permutation(64, 3, 10, rng)
    np.testing.assert_array_equal(np.sort(p), np.arange(64))
    np.testing.assert_array_equal(shuffle_permutation(64, 10, 10, rng), np.arange(64))
    a = [shuffle_permutation(16, i, 5, np.random.default_rng(4)) for i in range(3)]
    b = [shuffle_permutation(16, i, 5, np.random.default_rng(4)) for i in range(3)]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_shuffle_atom_order_applies_permutation():
    atoms = Tensor(np.arange(4 * 2 * 2, dtype=np.float32).reshape(4, 2, 2))
    perm = np.array([2, 0, 3, 1])
    np.testing.assert_array_equal(shuffle_atom_order(atoms, perm).data, atoms.data[perm])


def test_freeze_is_deterministic_and_stops_generator_grads():
    gen = DictionaryGenerator(4, 8, np.random.default_rng(0))
    enc = DictionaryEncoder(4, 8, np.random.default_rng(1))
    d1, c1 = freeze(gen, enc, noise_seed=11)
    d2, c2 = freeze(gen, enc, noise_seed=11)
    assert d1.frozen
    np.testing.assert_array_equal(d1.atoms, d2.atoms)
    np.testing.assert_array_equal(c1.code, c2.code)
    assert all(not p.requires_grad for p in gen.parameters())


def test_atom_grid_layout():
    atoms = np.linspace(-1, 1, 128 * 16, dtype=np.float32).reshape(128, 4, 4)
    grid = atom_grid(atoms)
    # 128 atoms -> 16 columns x 8 rows of 4x4 tiles with 1-px separators
    assert grid.shape == (8 * 5 - 1, 16 * 5 - 1)
    np.testing.assert_allclose(grid[0:4, 5:9], (atoms[1] + 1) / 2)
    np.testing.assert_allclose(grid[5:9, 0:4], (atoms[16] + 1) / 2)
    assert grid.min() >= 0 and grid.max() <= 1
