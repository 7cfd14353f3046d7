"""Layers built from the differentiable ops."""

from __future__ import annotations

import math

import numpy as np

from . import ops
from .rng import Rng, derive
from .tensor import Parameter, Tensor


class Module:
    """Container that tracks parameters and submodules in assignment order."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, key, value):
        if isinstance(value, Parameter):
            self._params[key] = value
        elif isinstance(value, Module):
            self._modules[key] = value
        object.__setattr__(self, key, value)

    def named_parameters(self):
        for p in self._params.values():
            yield p.name, p
        for m in self._modules.values():
            yield from m.named_parameters()

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def buffers(self) -> dict:
        """Non-trainable state (e.g. running statistics) keyed by dotted name."""
        out = {}
        for m in self._modules.values():
            out.update(m.buffers())
        return out

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad[...] = 0.0

    def train(self, mode: bool = True) -> "Module":
        object.__setattr__(self, "training", mode)
        for m in self._modules.values():
            m.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False

    def unfreeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = True


def init_uniform(name: str, shape, bound: float, seed: int, dtype=np.float64) -> Parameter:
    rng = derive(seed, name)
    return Parameter(rng.uniform(-bound, bound, size=shape).astype(dtype), name=name)


def init_const(name: str, shape, value: float, dtype=np.float64) -> Parameter:
    return Parameter(np.full(shape, value, dtype=dtype), name=name)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, name: str, seed: int, bias: bool = True, dtype=np.float64):
        super().__init__()
        bound = 1.0 / math.sqrt(n_in)
        self.weight = init_uniform(f"{name}.weight", (n_out, n_in), bound, seed, dtype)
        self.bias = init_uniform(f"{name}.bias", (n_out,), bound, seed, dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = ops.matmul(x, self.weight.T)
        return y + self.bias if self.bias is not None else y


class Embedding(Module):
    def __init__(self, n: int, dim: int, name: str, seed: int, dtype=np.float64):
        super().__init__()
        rng = derive(seed, f"{name}.weight")
        self.weight = Parameter((rng.normal(0.0, 1.0, size=(n, dim)) / math.sqrt(dim)).astype(dtype),
                                name=f"{name}.weight")

    def __call__(self, ids) -> Tensor:
        return ops.embedding(self.weight, ids)


class LSTMCell(Module):
    """Gate order along the 4H axis: input, forget, candidate, output."""

    def __init__(self, n_in: int, hidden: int, name: str, seed: int, dtype=np.float64):
        super().__init__()
        bound = 1.0 / math.sqrt(hidden)
        self.hidden = hidden
        self.w_ih = init_uniform(f"{name}.w_ih", (4 * hidden, n_in), bound, seed, dtype)
        self.w_hh = init_uniform(f"{name}.w_hh", (4 * hidden, hidden), bound, seed, dtype)
        self.bias = init_uniform(f"{name}.bias", (4 * hidden,), bound, seed, dtype)

    def __call__(self, x, h_prev, c_prev):
        return lstm_cell(x, h_prev, c_prev, self)


def lstm_cell(x, h_prev, c_prev, params: LSTMCell):
    """One LSTM step: c = f*c_prev + i*g, h = o*tanh(c)."""
    hid = params.hidden
    if x.shape[-1] != params.w_ih.shape[1] or h_prev.shape[-1] != hid or c_prev.shape[-1] != hid:
        raise ValueError(
            f"lstm_cell shape mismatch: x{x.shape} h{h_prev.shape} c{c_prev.shape} "
            f"expects in={params.w_ih.shape[1]} hidden={hid}"
        )
    z = ops.matmul(x, params.w_ih.T) + ops.matmul(h_prev, params.w_hh.T) + params.bias
    i = ops.sigmoid(z[..., 0:hid])
    f = ops.sigmoid(z[..., hid:2 * hid])
    g = ops.tanh(z[..., 2 * hid:3 * hid])
    o = ops.sigmoid(z[..., 3 * hid:4 * hid])
    c = f * c_prev + i * g
    h = o * ops.tanh(c)
    return h, c


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, name: str, seed: int, k: int = 3, dtype=np.float64):
        super().__init__()
        bound = math.sqrt(6.0 / (c_in * k * k))
        self.pad = k // 2
        self.weight = init_uniform(f"{name}.weight", (c_out, c_in, k, k), bound, seed, dtype)
        self.bias = init_const(f"{name}.bias", (c_out,), 0.0, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.pad)


class BatchNorm2d(Module):
    """Per-channel normalisation; batch statistics in training, running ones in eval."""

    def __init__(self, ch: int, name: str, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float64):
        super().__init__()
        self.name = name
        self.momentum = momentum
        self.eps = eps
        self.gamma = init_const(f"{name}.gamma", (ch,), 1.0, dtype)
        self.beta = init_const(f"{name}.beta", (ch,), 0.0, dtype)
        self.running_mean = np.zeros(ch, dtype=dtype)
        self.running_var = np.ones(ch, dtype=dtype)
        self.track = True

    def buffers(self) -> dict:
        return {f"{self.name}.running_mean": self.running_mean, f"{self.name}.running_var": self.running_var}

    def __call__(self, x: Tensor) -> Tensor:
        if self.training:
            mu = ops.mean(x, axis=(0, 2, 3), keepdims=True)
            centred = x - mu
            var = ops.mean(centred * centred, axis=(0, 2, 3), keepdims=True)
            if self.track:
                m = self.momentum
                n = x.shape[0] * x.shape[2] * x.shape[3]
                unbiased = var.data.reshape(-1) * (n / max(n - 1, 1))
                self.running_mean[...] = (1 - m) * self.running_mean + m * mu.data.reshape(-1)
                self.running_var[...] = (1 - m) * self.running_var + m * unbiased
            xn = centred / ops.exp(0.5 * ops.log(var + self.eps))
        else:
            mu = self.running_mean.reshape(1, -1, 1, 1)
            sd = np.sqrt(self.running_var + self.eps).reshape(1, -1, 1, 1)
            xn = (x - mu) / sd
        g = ops.reshape(self.gamma, (1, -1, 1, 1))
        b = ops.reshape(self.beta, (1, -1, 1, 1))
        return xn * g + b


class Dropout:
    """Inverted dropout driven by an explicit Rng.

    ``capture()`` records the masks drawn on the next pass; subsequent passes
    replay them in call order, which makes the forward deterministic for
    gradient checking.
    """

    def __init__(self, rng: Rng | None = None):
        self.rng = rng
        self._recorded = None
        self._replay = False
        self._cursor = 0

    def capture(self) -> None:
        self._recorded = []
        self._replay = False
        self._cursor = 0

    def freeze(self) -> None:
        if self._recorded is None:
            raise RuntimeError("freeze() needs a preceding capture() pass")
        self._replay = True
        self._cursor = 0

    def release(self) -> None:
        self._recorded = None
        self._replay = False

    def rewind(self) -> None:
        self._cursor = 0

    def __call__(self, x: Tensor, p: float, active: bool) -> Tensor:
        if not active or p <= 0.0:
            return x
        if self._replay:
            mask = self._recorded[self._cursor]
            self._cursor += 1
            if mask.shape != x.shape:
                raise RuntimeError("replayed dropout mask does not match input shape")
        else:
            if self.rng is None:
                raise RuntimeError("active dropout needs an Rng")
            mask = self.rng.random(x.shape) >= p
            if self._recorded is not None:
                self._recorded.append(mask)
        return ops.dropout_with_mask(x, mask, p)
