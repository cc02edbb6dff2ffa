"""Dense NCHW tensors with reverse-mode differentiation.

Every op here is a plain function taking :class:`Tensor` arguments and
returning a new :class:`Tensor`. When any input requires a gradient the
result records its parents and a closure that maps the upstream gradient to
the gradients of those parents. :func:`backward` walks that record in reverse
topological order.

Arrays are float32 unless the caller builds tensors from float64 data, in
which case every op preserves float64 (handy for tight gradient checks).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_GRAD_ENABLED = True

# Bytes of im2col scratch allowed per chunk when running without a graph.
_NO_GRAD_CHUNK_BYTES = 64 * 2**20


class ShapeError(ValueError):
    """Raised when operand shapes do not conform."""


@contextlib.contextmanager
def no_grad():
    """Run ops without recording a graph."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """An array plus the bookkeeping needed to differentiate through it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype != np.float64:
            arr = arr.astype(np.float32, copy=False)
        if arr.ndim == 0:
            arr = arr.reshape(())
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"all extents must be >= 1, got {arr.shape}")
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, _wrap(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, _wrap(-1.0, self))

    def backward(self) -> None:
        backward(self)


def _wrap(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data: np.ndarray, parents: Sequence[Tensor], grad_fn: Callable) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = grad_fn
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: dict[str, Tensor] | None = None) -> dict[str, np.ndarray] | None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    When ``params`` is given, also return a gradient store holding one entry
    per trainable parameter; parameters the loss does not depend on get a
    zero array, parameters with ``requires_grad=False`` are left out.
    """
    if loss.data.size != 1:
        raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(_topo_order(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
    if params is None:
        return None
    store = {}
    for name, p in params.items():
        if not p.requires_grad:
            continue
        store[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
    return store


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------- elementwise


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.data.size != 1 and b.data.size != 1:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _unscalar(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype).reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "add")

    def grad_fn(g):
        return _unscalar(g, a.shape), _unscalar(g, b.shape)

    return _make(a.data + b.data, (a, b), grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")

    def grad_fn(g):
        return _unscalar(g, a.shape), _unscalar(-g, b.shape)

    return _make(a.data - b.data, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "mul")

    def grad_fn(g):
        return _unscalar(g * b.data, a.shape), _unscalar(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), grad_fn)


def elementwise(a: Tensor, b: Tensor, op: str) -> Tensor:
    if op == "add":
        return add(a, b)
    if op == "mul":
        return mul(a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


def relu(x: Tensor) -> Tensor:
    y = np.maximum(x.data, 0)
    return _make(y, (x,), lambda g: (g * (y > 0),))


def tanh_act(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1 - y * y),))


def sum_all(x: Tensor) -> Tensor:
    return _make(np.asarray(x.data.sum(dtype=np.float64), dtype=x.dtype), (x,),
                 lambda g: (np.broadcast_to(g, x.shape).astype(x.dtype),))


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    return _make(np.asarray(x.data.mean(dtype=np.float64), dtype=x.dtype), (x,),
                 lambda g: (np.full(x.shape, g / n, dtype=x.dtype),))


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error over every element."""
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    value = np.asarray(np.abs(diff).mean(dtype=np.float64), dtype=pred.dtype)

    def grad_fn(g):
        s = np.sign(diff) * (g / n)
        return s, -s

    return _make(value, (pred, target), grad_fn)


# ------------------------------------------------------------------- channels


def softmax_channels(x: Tensor) -> Tensor:
    """Softmax over axis 1 of an (B, N, H, W) tensor."""
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _make(y, (x,), grad_fn)


def sum_channels(x: Tensor) -> Tensor:
    return _make(x.data.sum(axis=1, keepdims=True), (x,),
                 lambda g: (np.broadcast_to(g, x.shape).copy(),))


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise ShapeError("concat_channels needs at least one tensor")
    ref = xs[0].shape
    for t in xs[1:]:
        if t.ndim != len(ref) or t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ShapeError(f"concat_channels: {t.shape} does not match {ref} outside axis 1")
    sizes = np.cumsum([t.shape[1] for t in xs])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, sizes, axis=1))

    return _make(np.concatenate([t.data for t in xs], axis=1), tuple(xs), grad_fn)


def index_channels(x: Tensor, index: Sequence[int] | np.ndarray) -> Tensor:
    """Gather channels: ``out[:, k] = x[:, index[k]]``."""
    idx = np.asarray(index, dtype=np.intp)

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (slice(None), idx), g)
        return (gx,)

    return _make(x.data[:, idx], (x,), grad_fn)


def repeat_spatial(x: Tensor, h: int, w: int, batch: int | None = None) -> Tensor:
    """Tile a (1 or B, N, 1, 1) tensor across an h x w grid (and ``batch`` copies)."""
    if x.ndim != 4 or x.shape[2:] != (1, 1):
        raise ShapeError(f"repeat_spatial expects (B, N, 1, 1) input, got {x.shape}")
    b = x.shape[0] if batch is None else batch
    if x.shape[0] not in (1, b):
        raise ShapeError(f"repeat_spatial cannot broadcast batch {x.shape[0]} to {b}")
    out = np.broadcast_to(x.data, (b, x.shape[1], h, w)).copy()
    axes = (0, 2, 3) if x.shape[0] != b else (2, 3)
    return _make(out, (x,), lambda g: (g.sum(axis=axes, keepdims=True),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


# -------------------------------------------------------------------- spatial


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    b, c, h, w = x.shape
    if c % (r * r):
        raise ShapeError(f"pixel_shuffle: channels {c} not divisible by r^2={r * r}")
    oc = c // (r * r)
    y = x.data.reshape(b, oc, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(b, oc, h * r, w * r)

    def grad_fn(g):
        return (g.reshape(b, oc, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(x.shape),)

    return _make(y, (x,), grad_fn)


def upsample_nearest(x: Tensor, s: int) -> Tensor:
    if s < 1:
        raise ValueError(f"scale must be >= 1, got {s}")
    b, c, h, w = x.shape
    y = np.broadcast_to(x.data[:, :, :, None, :, None], (b, c, h, s, w, s)).reshape(b, c, h * s, w * s)

    def grad_fn(g):
        return (g.reshape(b, c, h, s, w, s).sum(axis=(3, 5)),)

    return _make(y, (x,), grad_fn)


def max_pool2d(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; H and W must be even."""
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2d needs even spatial dims, got {h}x{w}")
    blocks = x.data.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)
    y = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(x.shape)
        return (gb,)

    return _make(y, (x,), grad_fn)


def pad2d(x: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    """Zero-pad the two trailing axes."""
    h, w = x.shape[-2:]
    pads = [(0, 0)] * (x.ndim - 2) + [(top, bottom), (left, right)]
    y = np.pad(x.data, pads)
    return _make(y, (x,), lambda g: (g[..., top:top + h, left:left + w],))


def crop2d(x: Tensor, top: int, left: int, height: int, width: int) -> Tensor:
    h, w = x.shape[-2:]
    if top < 0 or left < 0 or top + height > h or left + width > w:
        raise ShapeError(f"crop ({top},{left},{height},{width}) outside {h}x{w}")

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        gx[..., top:top + height, left:left + width] = g
        return (gx,)

    return _make(x.data[..., top:top + height, left:left + width].copy(), (x,), grad_fn)


def paste(base: Tensor, patch: Tensor, top: int, left: int) -> Tensor:
    """Copy of ``base`` with the window at (top, left) replaced by ``patch``."""
    ph, pw = patch.shape[-2:]
    h, w = base.shape[-2:]
    if base.shape[:-2] != patch.shape[:-2] or top + ph > h or left + pw > w or top < 0 or left < 0:
        raise ShapeError(f"paste: patch {patch.shape} at ({top},{left}) does not fit {base.shape}")
    y = base.data.copy()
    y[..., top:top + ph, left:left + pw] = patch.data

    def grad_fn(g):
        gb = g.copy()
        gb[..., top:top + ph, left:left + pw] = 0
        return gb, g[..., top:top + ph, left:left + pw]

    return _make(y, (base, patch), grad_fn)


# ---------------------------------------------------------------- convolution


def _conv_out(size: int, k: int, stride: int, pad: int, dim: str) -> int:
    if size + 2 * pad < k:
        raise ShapeError(f"conv2d: {dim} {size} + 2*padding {pad} smaller than kernel {k}")
    return (size + 2 * pad - k) // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, groups: int, ho: int, wo: int) -> np.ndarray:
    b, c = xp.shape[:2]
    cg = c // groups
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    win = win.reshape(b, groups, cg, ho, wo, kh, kw)
    return win.transpose(1, 0, 3, 4, 2, 5, 6).reshape(groups, b * ho * wo, cg * kh * kw)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """Grouped 2-D cross-correlation of a (B, C, H, W) input."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects a 4-D input, got rank {x.ndim}")
    b, c, h, w = x.shape
    o, cg, kh, kw = weight.shape
    if c % groups:
        raise ShapeError(f"conv2d: input channels {c} not divisible by groups {groups}")
    if o % groups:
        raise ShapeError(f"conv2d: output channels {o} not divisible by groups {groups}")
    if cg != c // groups:
        raise ShapeError(f"conv2d: weight expects {cg} channels per group, input gives {c // groups}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({o},)")
    ho = _conv_out(h, kh, stride, padding, "height")
    wo = _conv_out(w, kw, stride, padding, "width")
    og = o // groups
    k = cg * kh * kw
    wm = weight.data.reshape(groups, og, k).transpose(0, 2, 1)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data

    if groups == 1:
        return _conv2d_dense(x, weight, bias, stride, padding, ho, wo)

    need_graph = _GRAD_ENABLED and (x.requires_grad or weight.requires_grad or (bias is not None and bias.requires_grad))
    row_bytes = b * wo * k * groups * xp.itemsize
    if not need_graph and row_bytes * ho > _NO_GRAD_CHUNK_BYTES and ho > 1:
        step = max(1, _NO_GRAD_CHUNK_BYTES // row_bytes)
        parts = []
        for r0 in range(0, ho, step):
            r1 = min(ho, r0 + step)
            sub_x = xp[:, :, r0 * stride:(r1 - 1) * stride + kh]
            cols = _im2col(sub_x, kh, kw, stride, groups, r1 - r0, wo)
            parts.append(_cols_to_out(cols @ wm, b, groups, og, r1 - r0, wo))
        y = np.concatenate(parts, axis=2)
        if bias is not None:
            y += bias.data[None, :, None, None]
        return Tensor(y)

    cols = _im2col(xp, kh, kw, stride, groups, ho, wo)
    y = _cols_to_out(cols @ wm, b, groups, og, ho, wo)
    if bias is not None:
        y += bias.data[None, :, None, None]

    def grad_fn(g):
        gm = g.reshape(b, groups, og, ho, wo).transpose(1, 0, 3, 4, 2).reshape(groups, b * ho * wo, og)
        gw = None
        if weight.requires_grad:
            gw = (cols.transpose(0, 2, 1) @ gm).transpose(0, 2, 1).reshape(weight.shape)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gc = (gm @ wm.transpose(0, 2, 1)).reshape(groups, b, ho, wo, cg, kh, kw)
            gc = gc.transpose(1, 0, 4, 2, 3, 5, 6).reshape(b, c, ho, wo, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += gc[..., i, j]
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(y, parents, grad_fn)


def _unfold(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """(B, C, Hp, Wp) -> (B, C*kh*kw, ho*wo), channel-major like the weight layout."""
    b, c = xp.shape[:2]
    cols = np.empty((b, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]
    return cols.reshape(b, c * kh * kw, ho * wo)


def _conv2d_dense(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int, padding: int,
                  ho: int, wo: int) -> Tensor:
    b, c, h, w = x.shape
    o, _, kh, kw = weight.shape
    wm = weight.data.reshape(o, c * kh * kw)
    pointwise = kh == kw == 1 and stride == 1 and padding == 0
    need_graph = _GRAD_ENABLED and (x.requires_grad or weight.requires_grad or (bias is not None and bias.requires_grad))

    if pointwise:
        cols = x.data.reshape(b, c, h * w)
        y = wm @ cols
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
        row_bytes = b * wo * c * kh * kw * xp.itemsize
        if not need_graph and row_bytes * ho > _NO_GRAD_CHUNK_BYTES and ho > 1:
            step = max(1, _NO_GRAD_CHUNK_BYTES // row_bytes)
            parts = []
            for r0 in range(0, ho, step):
                r1 = min(ho, r0 + step)
                sub_x = xp[:, :, r0 * stride:(r1 - 1) * stride + kh]
                parts.append((wm @ _unfold(sub_x, kh, kw, stride, r1 - r0, wo)).reshape(b, o, r1 - r0, wo))
            y = np.concatenate(parts, axis=2).reshape(b, o, ho * wo)
            cols = None
        else:
            cols = _unfold(xp, kh, kw, stride, ho, wo)
            y = wm @ cols
    y = y.reshape(b, o, ho, wo)
    if bias is not None:
        y += bias.data[None, :, None, None]
    if not need_graph:
        return Tensor(y)

    def grad_fn(g):
        gm = g.reshape(b, o, ho * wo)
        gw = gb = gx = None
        if weight.requires_grad:
            gw = (gm @ cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            gc = wm.T @ gm
            if pointwise:
                gx = gc.reshape(x.shape)
            else:
                gc = gc.reshape(b, c, kh, kw, ho, wo)
                gxp = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=gc.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += gc[:, :, i, j]
                gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(y, parents, grad_fn)


def _cols_to_out(prod: np.ndarray, b: int, groups: int, og: int, ho: int, wo: int) -> np.ndarray:
    return prod.reshape(groups, b, ho, wo, og).transpose(1, 0, 4, 2, 3).reshape(b, groups * og, ho, wo)


# ----------------------------------------------------------------- batch norm


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Per-channel normalization of a (B, C, H, W) tensor.

    In training mode the running statistics arrays are updated in place
    (unbiased variance, as the running estimate).
    """
    b, c, h, w = x.shape
    shape = (1, c, 1, 1)
    if training:
        if b < 2:
            raise ShapeError("batch_norm in training mode needs a batch of at least 2")
        mean = x.data.mean(axis=(0, 2, 3), dtype=np.float64)
        var = x.data.var(axis=(0, 2, 3), dtype=np.float64)
        n = b * h * w
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * n / max(n - 1, 1)
        mean = mean.astype(x.dtype)
        var = var.astype(x.dtype)
    else:
        mean = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mean.reshape(shape)) * inv.reshape(shape)
    y = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

    def grad_fn(g):
        gg = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        if training:
            n = b * h * w
            gx = (gamma.data * inv).reshape(shape) / n * (
                n * g - gbeta.reshape(shape) - xhat * gg.reshape(shape))
        else:
            gx = g * (gamma.data * inv).reshape(shape)
        return gx.astype(x.dtype), gg, gbeta

    return _make(y.astype(x.dtype), (x, gamma, beta), grad_fn)


# ------------------------------------------------------------- reconstruction


def weighted_atom_sum(coeffs: Tensor, atoms: Tensor, s: int) -> Tensor:
    """Paint each coefficient pixel as an s x s weighted sum of atoms.

    ``coeffs`` is (B, N, h, w), ``atoms`` is (N, s, s); the result is
    (B, 1, s*h, s*w) with ``out[b, 0, s*i+dy, s*j+dx] = sum_k coeffs[b,k,i,j] * atoms[k,dy,dx]``.
    The sum runs over k in ascending order, one term at a time.
    """
    b, n, h, w = coeffs.shape
    if atoms.shape != (n, s, s):
        raise ShapeError(f"weighted_atom_sum: atoms {atoms.shape} do not match {n} maps at scale {s}")
    m = coeffs.data
    d = atoms.data
    acc = np.zeros((b, h, s, w, s), dtype=np.result_type(m, d))
    for k in range(n):
        acc += m[:, k, :, None, :, None] * d[k, None, :, None, :]
    y = acc.reshape(b, 1, h * s, w * s)

    def grad_fn(g):
        gb = g.reshape(b, h, s, w, s).transpose(0, 1, 3, 2, 4).reshape(b * h * w, s * s)
        gm = None
        if coeffs.requires_grad:
            gm = (gb @ d.reshape(n, s * s).T).reshape(b, h, w, n).transpose(0, 3, 1, 2)
        gd = None
        if atoms.requires_grad:
            gd = (m.transpose(1, 0, 2, 3).reshape(n, b * h * w) @ gb).reshape(n, s, s)
        return gm, gd

    return _make(y, (coeffs, atoms), grad_fn)
