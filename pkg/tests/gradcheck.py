"""Central finite differences against the reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from srdd import autograd as ag
from srdd.autograd import Tensor


def _loss_value(out: Tensor, proj: np.ndarray) -> float:
    return float(np.sum(out.data.astype(np.float64) * proj))


def gradcheck(fn: Callable[[], Tensor], leaves: Sequence[Tensor], eps: float = 1e-3,
              samples: int = 24, seed: int = 0) -> list[float]:
    """Relative error per leaf, ``|g_ad - g_fd| / max(|g_ad|, |g_fd|)`` over sampled coordinates.

    ``fn`` rebuilds the graph from ``leaves`` (float32, requires_grad set by
    the caller). The scalar probed is ``sum(fn() * R)`` for a fixed random R;
    the numeric side perturbs each sampled coordinate by +-eps in the leaf dtype and
    reduces the output in float64.
    """
    rng = np.random.default_rng(seed)
    out = fn()
    proj = rng.standard_normal(out.shape)
    for leaf in leaves:
        leaf.grad = None
    loss = ag.sum_all(ag.mul(out, Tensor(proj.astype(np.float32))))
    ag.backward(loss)
    errors = []
    for leaf in leaves:
        analytic = np.zeros(leaf.shape) if leaf.grad is None else leaf.grad.astype(np.float64)
        flat = leaf.data.reshape(-1)
        picks = rng.choice(flat.size, size=min(samples, flat.size), replace=False)
        num = np.empty(len(picks))
        with ag.no_grad():
            for i, k in enumerate(picks):
                orig = flat[k]
                flat[k] = orig + eps
                up = _loss_value(fn(), proj)
                flat[k] = orig - eps
                down = _loss_value(fn(), proj)
                flat[k] = orig
                # the perturbation actually applied after rounding to the leaf dtype
                step = float(flat.dtype.type(orig + eps)) - float(flat.dtype.type(orig - eps))
                num[i] = (up - down) / step
        ana = analytic.reshape(-1)[picks]
        scale = max(np.linalg.norm(ana), np.linalg.norm(num), 1e-12)
        errors.append(float(np.linalg.norm(ana - num) / scale))
    return errors


def gradcheck_reference(fn: Callable[[], Tensor], leaves: Sequence[Tensor], eps: float = 1e-6,
                        samples: int = 8, seed: int = 0) -> list[float]:
    """Float32 reverse-mode gradients against float64 central differences.

    The analytic side runs at the leaves' own (float32) precision. The leaves
    are then promoted to float64 in place, so the numeric side sees the very
    same weights without float32 rounding or ReLU kinks at the probe step,
    and restored afterwards. Error is norm-wise over sampled coordinates.
    """
    rng = np.random.default_rng(seed)
    out = fn()
    proj = rng.standard_normal(out.shape)
    for leaf in leaves:
        leaf.grad = None
    ag.backward(ag.sum_all(ag.mul(out, Tensor(proj.astype(out.data.dtype)))))
    analytic = [np.zeros(leaf.shape) if leaf.grad is None else leaf.grad.astype(np.float64) for leaf in leaves]
    saved = [leaf.data for leaf in leaves]
    errors = []
    try:
        for leaf in leaves:
            leaf.data = leaf.data.astype(np.float64)
        with ag.no_grad():
            for leaf, ana_full in zip(leaves, analytic):
                flat = leaf.data.reshape(-1)
                picks = rng.choice(flat.size, size=min(samples, flat.size), replace=False)
                num = np.empty(len(picks))
                for i, k in enumerate(picks):
                    orig = flat[k]
                    flat[k] = orig + eps
                    up = _loss_value(fn(), proj)
                    flat[k] = orig - eps
                    down = _loss_value(fn(), proj)
                    flat[k] = orig
                    num[i] = (up - down) / (2 * eps)
                ana = ana_full.reshape(-1)[picks]
                scale = max(np.linalg.norm(ana), np.linalg.norm(num), 1e-30)
                errors.append(float(np.linalg.norm(ana - num) / scale))
    finally:
        for leaf, data in zip(leaves, saved):
            leaf.data = data
    return errors
