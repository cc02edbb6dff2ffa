import numpy as np

from srdd.nn import Parameter
from srdd.optim import Adam


def test_first_step_moves_by_lr_times_sign():
    p = Parameter(np.array([1.0, -2.0, 3.0]))
    opt = Adam({"p": p}, lr=1e-2)
    opt.step({"p": np.array([0.5, -3.0, 1e-3], np.float32)})
    # m_hat = g, v_hat = g^2 after bias correction, so the step is lr * g / (|g| + eps)
    np.testing.assert_allclose(p.data, [1.0 - 1e-2, -2.0 + 1e-2, 3.0 - 1e-2], atol=1e-6)


def test_hand_evaluated_two_steps():
    p = Parameter(np.array([0.0]))
    opt = Adam({"p": p}, lr=0.1)
    g1, g2 = 1.0, -0.5
    opt.step({"p": np.array([g1], np.float32)})
    opt.step({"p": np.array([g2], np.float32)})
    m1, v1 = 0.1 * g1, 0.001 * g1 ** 2
    m2, v2 = 0.9 * m1 + 0.1 * g2, 0.999 * v1 + 0.001 * g2 ** 2
    x1 = -0.1 * (m1 / 0.1) / (np.sqrt(v1 / 0.001) + 1e-8)
    x2 = x1 - 0.1 * (m2 / (1 - 0.9 ** 2)) / (np.sqrt(v2 / (1 - 0.999 ** 2)) + 1e-8)
    np.testing.assert_allclose(p.data, [x2], rtol=1e-5)


def test_zero_gradient_leaves_parameters():
    p = Parameter(np.array([1.5, 2.5]))
    Adam({"p": p}, lr=1.0).step({"p": np.zeros(2, np.float32)})
    np.testing.assert_array_equal(p.data, [1.5, 2.5])


def test_identical_runs_are_bitwise_equal():
    def run():
        rng = np.random.default_rng(7)
        p = Parameter(rng.standard_normal(5))
        opt = Adam({"p": p}, lr=1e-3)
        for _ in range(10):
            opt.step({"p": rng.standard_normal(5).astype(np.float32)})
        return p.data.tobytes(), opt.state("o")["o.m.p"].tobytes()
    assert run() == run()


def test_state_roundtrip_continues_identically():
    rng = np.random.default_rng(3)
    grads = [rng.standard_normal(4).astype(np.float32) for _ in range(6)]
    a = Parameter(np.ones(4))
    opt_a = Adam({"a": a}, lr=1e-2)
    for g in grads:
        opt_a.step({"a": g})
    b = Parameter(np.ones(4))
    opt_b = Adam({"a": b}, lr=1e-2)
    for g in grads[:3]:
        opt_b.step({"a": g})
    c = Parameter(b.data.copy())
    opt_c = Adam({"a": c}, lr=1e-2)
    opt_c.load_state("x", opt_b.state("x"), opt_b.t)
    for g in grads[3:]:
        opt_c.step({"a": g})
    np.testing.assert_array_equal(a.data, c.data)
