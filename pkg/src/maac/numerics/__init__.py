"""Dense-array substrate: tensors, differentiable ops, layers, gradient checking."""

from .tensor import NonFiniteError, Parameter, Tensor, as_tensor, is_grad_enabled, no_grad
from . import ops
from .ops import (
    avg_pool2d,
    concat,
    conv2d,
    embedding,
    gather_last,
    global_avg_pool,
    glu,
    log_softmax,
    relu,
    sigmoid,
    softmax,
    softmax_axis,
    tanh,
)
from .nn import BatchNorm2d, Conv2d, Dropout, Embedding, Linear, LSTMCell, Module, lstm_cell
from .rng import ALGORITHM as RNG_ALGORITHM, Rng, derive
from .gradcheck import NonDeterministicError, grad_check

__all__ = [
    "Tensor", "Parameter", "NonFiniteError", "as_tensor", "no_grad", "is_grad_enabled", "ops",
    "avg_pool2d", "concat", "conv2d", "embedding", "gather_last", "global_avg_pool", "glu",
    "log_softmax", "relu", "sigmoid", "softmax", "softmax_axis", "tanh",
    "BatchNorm2d", "Conv2d", "Dropout", "Embedding", "Linear", "LSTMCell", "Module", "lstm_cell",
    "Rng", "derive", "RNG_ALGORITHM", "grad_check", "NonDeterministicError",
]
