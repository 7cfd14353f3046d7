"""Differentiable forward operations.

Every function takes tensors (or array-likes) and returns a new Tensor.
Backward closures return one gradient per parent, ``None`` where the parent
is not differentiable.
"""

from __future__ import annotations

import numpy as np

from .. import kernels
from .tensor import Tensor, make_result, NonFiniteError


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float64
    return Tensor(np.asarray(x, dtype=dtype))


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, _lift(b, a)
    b = _lift(b)
    return _lift(a, b), b


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make_result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make_result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make_result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return make_result(a.data / b.data, (a, b), backward, "div")


def add_n(*xs) -> Tensor:
    """Sum of equally-shaped tensors, left to right."""
    xs = [_lift(x) for x in xs]
    data = xs[0].data.copy()
    for x in xs[1:]:
        data = data + x.data
    return make_result(data, tuple(xs), lambda g: tuple(g for _ in xs), "add_n")


# ---------------------------------------------------------------------------
# linear algebra and shape manipulation
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim == 1 or b.ndim == 1:
        return _matmul_vec(a, b)

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_result(a.data @ b.data, (a, b), backward, "matmul")


def _matmul_vec(a: Tensor, b: Tensor) -> Tensor:
    if b.ndim == 1 and a.ndim >= 1:
        # [..., n] @ [n] -> [...]
        def backward(g):
            ga = g[..., None] * b.data
            gb = (a.data * g[..., None]).reshape(-1, b.shape[0]).sum(axis=0)
            return ga, gb

        return make_result(a.data @ b.data, (a, b), backward, "matvec")
    # [n] @ [n, m] -> [m]
    def backward(g):
        return b.data @ g, np.outer(a.data, g)

    return make_result(a.data @ b.data, (a, b), backward, "vecmat")


def reshape(x, shape) -> Tensor:
    x = _lift(x)
    src = x.shape
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x, axes=None) -> Tensor:
    x = _lift(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return make_result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def _is_basic(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in items)


def getitem(x, idx) -> Tensor:
    x = _lift(x)
    basic = _is_basic(idx)

    def backward(g):
        out = np.zeros_like(x.data)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return make_result(np.array(x.data[idx]), (x,), backward, "getitem")


def concat(xs, axis: int = 0) -> Tensor:
    xs = [_lift(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_result(np.concatenate([x.data for x in xs], axis=axis), tuple(xs), backward, "concat")


def stack(xs, axis: int = 0) -> Tensor:
    xs = [_lift(x) for x in xs]

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(xs)))

    return make_result(np.stack([x.data for x in xs], axis=axis), tuple(xs), backward, "stack")


def embedding(weight: Tensor, ids) -> Tensor:
    """Row lookup ``weight[ids]`` with scatter-add backward."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError(f"token id out of range [0, {weight.shape[0]})")

    def backward(g):
        out = np.zeros_like(weight.data)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (out,)

    return make_result(weight.data[ids], (weight,), backward, "embedding")


def gather_last(x, ids) -> Tensor:
    """Pick ``x[..., ids[...]]`` along the last axis."""
    x = _lift(x)
    ids = np.asarray(ids, dtype=np.int64)
    idx = np.expand_dims(ids, -1)

    def backward(g):
        out = np.zeros_like(x.data)
        np.put_along_axis(out, idx, g[..., None], axis=-1)
        return (out,)

    return make_result(np.take_along_axis(x.data, idx, axis=-1)[..., 0], (x,), backward, "gather")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = _lift(x)
    axes = _norm_axes(axis, x.ndim)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(np.asarray(x.data.sum(axis=axes, keepdims=keepdims)), (x,), backward, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _lift(x)
    axes = _norm_axes(axis, x.ndim)
    count = 1
    for a in axes:
        count *= x.shape[a]
    if count == 0:
        raise ValueError("mean over an empty axis")

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return make_result(np.asarray(x.data.mean(axis=axes, keepdims=keepdims)), (x,), backward, "mean")


def global_avg_pool(x, reduce_axes) -> Tensor:
    """Arithmetic mean over ``reduce_axes``; those axes are dropped."""
    x = _lift(x)
    axes = _norm_axes(reduce_axes, x.ndim)
    if not axes:
        raise ValueError("global_avg_pool needs at least one axis")
    if any(x.shape[a] == 0 for a in axes):
        raise ValueError("global_avg_pool over an empty axis")
    return mean(x, axis=axes)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


def relu(x) -> Tensor:
    x = _lift(x)
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0.0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x) -> Tensor:
    x = _lift(x)
    s = _sigmoid(x.data)
    return make_result(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(x) -> Tensor:
    x = _lift(x)
    t = np.tanh(x.data)
    return make_result(t, (x,), lambda g: (g * (1.0 - t * t),), "tanh")


def exp(x) -> Tensor:
    x = _lift(x)
    e = np.exp(x.data)
    return make_result(e, (x,), lambda g: (g * e,), "exp")


def log(x) -> Tensor:
    x = _lift(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return make_result(out, (x,), lambda g: (g / x.data,), "log")


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient is zero where clamping is active."""
    x = _lift(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return make_result(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clip")


def softmax(x, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``."""
    x = _lift(x)
    if not np.isfinite(x.data).all():
        raise NonFiniteError("softmax input is not finite")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_result(s, (x,), backward, "softmax")


softmax_axis = softmax


def log_softmax(x, axis: int = -1) -> Tensor:
    x = _lift(x)
    m = x.data.max(axis=axis, keepdims=True)
    z = x.data - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def backward(g):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (x,), backward, "log_softmax")


def glu(y, axis: int = -1) -> Tensor:
    """Split ``y`` into halves [A, B] along ``axis`` and return A * sigmoid(B)."""
    y = _lift(y)
    d2 = y.shape[axis]
    if d2 % 2:
        raise ValueError(f"glu needs an even dimension, got {d2}")
    a_part, b_part = np.split(y.data, 2, axis=axis)
    gate = _sigmoid(b_part)

    def backward(g):
        ga = g * gate
        gb = g * a_part * gate * (1.0 - gate)
        return (np.concatenate([ga, gb], axis=axis),)

    return make_result(a_part * gate, (y,), backward, "glu")


# ---------------------------------------------------------------------------
# convolution, pooling, dropout
# ---------------------------------------------------------------------------


def conv2d(x, w, b, pad: int = 1) -> Tensor:
    x, w, b = _lift(x), _lift(w), _lift(b)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d shape mismatch: x{x.shape} w{w.shape}")
    out = kernels.conv2d_forward(x.data, w.data, b.data, pad)

    def backward(g):
        return kernels.conv2d_backward(g, x.data, w.data, pad)

    return make_result(out, (x, w, b), backward, "conv2d")


def avg_pool2d(x, ph: int, pw: int) -> Tensor:
    """Non-overlapping average pooling over the last two axes (floor mode)."""
    x = _lift(x)
    bsz, ch, h, w = x.shape
    ho, wo = h // ph, w // pw
    if ho == 0 or wo == 0:
        raise ValueError(f"pool {ph}x{pw} larger than input {h}x{w}")
    core = x.data[:, :, : ho * ph, : wo * pw]
    out = core.reshape(bsz, ch, ho, ph, wo, pw).mean(axis=(3, 5))

    def backward(g):
        gx = np.zeros_like(x.data)
        up = np.repeat(np.repeat(g, ph, axis=2), pw, axis=3) / (ph * pw)
        gx[:, :, : ho * ph, : wo * pw] = up
        return (gx,)

    return make_result(out, (x,), backward, "avg_pool2d")


def dropout_with_mask(x, mask: np.ndarray, p: float) -> Tensor:
    """Inverted dropout with an explicit keep-mask."""
    x = _lift(x)
    scale = np.asarray(mask, dtype=x.dtype) / (1.0 - p)
    return make_result(x.data * scale, (x,), lambda g: (g * scale,), "dropout")
