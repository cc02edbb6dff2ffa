import numpy as np
import pytest

from srdd import autograd as ag
from srdd.autograd import ShapeError, Tensor
from srdd.chroma import ChromaNet, upscale_chroma


@pytest.mark.parametrize("s,h,w", [(4, 24, 24), (8, 6, 9), (2, 5, 5)])
def test_shape_contract(s, h, w):
    net = ChromaNet(s, np.random.default_rng(0))
    with ag.no_grad():
        y = upscale_chroma(net, Tensor(np.random.default_rng(1).random((2, 2, h, w)).astype(np.float32)))
    assert y.shape == (2, 2, s * h, s * w)


def test_layer_widths():
    net = ChromaNet(4, np.random.default_rng(0))
    assert net.c1.weight.shape == (64, 2, 5, 5)
    assert net.c2.weight.shape == (32, 64, 3, 3)
    assert net.c3.weight.shape == (32, 32, 3, 3)


def test_fresh_net_outputs_zero_residual():
    net = ChromaNet(4, np.random.default_rng(0))
    y = net(Tensor(np.random.default_rng(1).random((1, 2, 6, 6)).astype(np.float32)))
    np.testing.assert_array_equal(y.data, 0)


def test_zero_weights_give_zero_output():
    net = ChromaNet(4, np.random.default_rng(0))
    for p in net.parameters():
        p.data[...] = 0
    y = net(Tensor(np.random.default_rng(1).random((1, 2, 6, 6)).astype(np.float32)))
    np.testing.assert_array_equal(y.data, 0)


def test_input_validation():
    net = ChromaNet(4, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        net(Tensor(np.zeros((1, 2, 4, 8), np.float32)))
    with pytest.raises(ShapeError):
        net(Tensor(np.zeros((1, 3, 8, 8), np.float32)))


def test_chroma_receives_gradient_from_l1():
    net = ChromaNet(2, np.random.default_rng(0))
    x = Tensor(np.random.default_rng(1).random((2, 2, 6, 6)).astype(np.float32))
    target = Tensor(np.random.default_rng(2).random((2, 2, 12, 12)).astype(np.float32))
    params = dict(net.named_parameters())
    grads = ag.backward(ag.l1_loss(net(x), target), params)
    # the zero-initialised last conv is the only one reached at the first step
    assert {k for k, g in grads.items() if np.abs(g).sum() > 0} == {"c3.weight", "c3.bias"}
    net.c3.weight.data = -grads["c3.weight"].copy()
    ag.zero_grad(params.values())
    grads = ag.backward(ag.l1_loss(net(x), target), params)
    assert all(np.abs(g).sum() > 0 for g in grads.values())
