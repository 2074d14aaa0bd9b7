# -*- coding: utf-8 -*-
"""
Minimal reverse-mode automatic differentiation over dense float64 arrays.

The :class:`Tensor` records the operations applied to it on a tape. Calling
:meth:`Tensor.backward` walks the tape in reverse topological order and
accumulates gradients into leaf tensors (parameters and graph inputs).

On top of the tape sits a small layer library (:class:`Dense`,
:class:`Conv1x1`, :class:`BatchNorm`, :class:`LayerNorm`,
:class:`MultiHeadAttention`, :class:`Residual`, :class:`Activation`,
:class:`Reshape`, :class:`UnitPower`, :class:`SignQuantizer`) that is
composed into a :class:`Graph`. Graphs are described by plain configuration
dictionaries, so a graph can be rebuilt and reloaded from a saved manifest.
"""

import json
import logging
import math
import os
import threading
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit, log_expit, log_softmax as _log_softmax, softmax as _softmax

from .errors import ConfigError, GraphStateError, NumericalError, ShapeError, ZeroVectorError
from .utils import STREAM_INIT, derive_rng

__all__ = ["Tensor", "ComplexTensor", "no_grad", "grad_enabled", "concat", "solve",
           "complex_solve", "Node", "Dense", "Conv1x1", "BatchNorm", "LayerNorm",
           "MultiHeadAttention", "Residual", "Activation", "Reshape", "UnitPower",
           "SignQuantizer", "transformer_block", "Graph", "Adam", "save_arrays",
           "load_arrays", "save_graph", "load_graph"]

log = logging.getLogger(__name__)

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


class no_grad:
    """ Context manager that disables tape recording in the current thread. """

    def __enter__(self):
        self._prev = grad_enabled()
        _state.enabled = False
        return self

    def __exit__(self, *exc):
        _state.enabled = self._prev


##############################################################################
################################### Tensor ###################################
##############################################################################


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, (gdim, tdim) in enumerate(zip(grad.shape, shape)):
        if tdim == 1 and gdim != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _axes(axis, ndim) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


class Tensor:
    """ A float64 array that remembers how it was computed.

        :param data: Array-like payload, converted to ``float64``.
        :param requires_grad: Leaf tensors with this flag receive gradients
            in :attr:`grad` when :meth:`backward` is called on a result.
        :param name: Optional name, used in error messages.
    """

    __array_priority__ = 100
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, name=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._grad_fn = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op!r}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    ###### Tape helpers

    @staticmethod
    def _result(data, parents, grad_fn, op):
        out = Tensor(data)
        if grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._grad_fn = grad_fn
            out._op = op
        return out

    def _topo(self) -> List["Tensor"]:
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return order

    def backward(self, grad=None):
        """ Propagate ``grad`` (default: ones for a single-element tensor)
            back to all leaf tensors that require gradients. """
        if not self.requires_grad:
            raise GraphStateError("backward() on a tensor that does not require gradients")
        if grad is None:
            if self.size != 1:
                raise ShapeError(f"backward() needs an explicit gradient for shape {self.shape}")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.shape:
            raise ShapeError(f"Output gradient shape {grad.shape} does not match {self.shape}")

        grads = {id(self): grad}
        for node in reversed(self._topo()):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._grad_fn is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._grad_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg

    ###### Arithmetic

    def __add__(self, other):
        other = _wrap(other)
        a, b = self.shape, other.shape
        return Tensor._result(self.data + other.data, (self, other),
                              lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)), "add")

    __radd__ = __add__

    def __sub__(self, other):
        other = _wrap(other)
        a, b = self.shape, other.shape
        return Tensor._result(self.data - other.data, (self, other),
                              lambda g: (_unbroadcast(g, a), _unbroadcast(-g, b)), "sub")

    def __rsub__(self, other):
        return _wrap(other) - self

    def __neg__(self):
        return Tensor._result(-self.data, (self,), lambda g: (-g,), "neg")

    def __mul__(self, other):
        other = _wrap(other)
        x, y = self.data, other.data
        return Tensor._result(x * y, (self, other),
                              lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)),
                              "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _wrap(other)
        x, y = self.data, other.data
        out = x / y
        return Tensor._result(out, (self, other),
                              lambda g: (_unbroadcast(g / y, x.shape),
                                         _unbroadcast(-g * out / y, y.shape)),
                              "div")

    def __rtruediv__(self, other):
        return _wrap(other) / self

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            raise TypeError("Only constant exponents are supported")
        x = self.data
        return Tensor._result(x ** exponent, (self,),
                              lambda g: (g * exponent * x ** (exponent - 1),), "pow")

    def matmul(self, other):
        """ Batched matrix product over the last two axes. """
        other = _wrap(other)
        if self.ndim < 2 or other.ndim < 2:
            raise ShapeError(f"matmul needs at least 2-D operands, got {self.shape} @ {other.shape}")
        x, y = self.data, other.data
        return Tensor._result(np.matmul(x, y), (self, other),
                              lambda g: (_unbroadcast(np.matmul(g, np.swapaxes(y, -1, -2)), x.shape),
                                         _unbroadcast(np.matmul(np.swapaxes(x, -1, -2), g), y.shape)),
                              "matmul")

    __matmul__ = matmul

    def __rmatmul__(self, other):
        return _wrap(other).matmul(self)

    ###### Reductions and shape ops

    def sum(self, axis=None, keepdims=False):
        shape = self.shape
        axes = _axes(axis, self.ndim)

        def grad_fn(g):
            if not keepdims:
                for ax in axes:
                    g = np.expand_dims(g, ax)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._result(self.data.sum(axis=axes, keepdims=keepdims), (self,), grad_fn, "sum")

    def mean(self, axis=None, keepdims=False):
        count = 1
        for ax in _axes(axis, self.ndim):
            count *= self.shape[ax]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor._result(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),), "reshape")

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))
        return Tensor._result(self.data.transpose(axes), (self,),
                              lambda g: (g.transpose(inverse),), "transpose")

    def swapaxes(self, a1, a2):
        return Tensor._result(np.swapaxes(self.data, a1, a2), (self,),
                              lambda g: (np.swapaxes(g, a1, a2),), "swapaxes")

    @property
    def mT(self):
        return self.swapaxes(-1, -2)

    def __getitem__(self, index):
        shape = self.shape

        def grad_fn(g):
            out = np.zeros(shape)
            np.add.at(out, index, g)
            return (out,)

        return Tensor._result(self.data[index], (self,), grad_fn, "getitem")

    ###### Elementwise functions

    def exp(self):
        out = np.exp(self.data)
        return Tensor._result(out, (self,), lambda g: (g * out,), "exp")

    def log(self):
        x = self.data
        return Tensor._result(np.log(x), (self,), lambda g: (g / x,), "log")

    def sqrt(self):
        out = np.sqrt(self.data)
        return Tensor._result(out, (self,), lambda g: (g * 0.5 / out,), "sqrt")

    def relu(self):
        mask = self.data > 0
        return Tensor._result(np.where(mask, self.data, 0.0), (self,), lambda g: (g * mask,), "relu")

    def sigmoid(self):
        out = expit(self.data)
        return Tensor._result(out, (self,), lambda g: (g * out * (1.0 - out),), "sigmoid")

    def softplus(self):
        """ ``log(1 + exp(x))``, numerically stable. """
        x = self.data
        return Tensor._result(np.logaddexp(0.0, x), (self,), lambda g: (g * expit(x),), "softplus")

    def log_sigmoid(self):
        x = self.data
        return Tensor._result(log_expit(x), (self,), lambda g: (g * expit(-x),), "log_sigmoid")

    def softmax(self, axis=-1):
        out = _softmax(self.data, axis=axis)

        def grad_fn(g):
            return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

        return Tensor._result(out, (self,), grad_fn, "softmax")

    def log_softmax(self, axis=-1):
        out = _log_softmax(self.data, axis=axis)

        def grad_fn(g):
            return (g - np.exp(out) * np.sum(g, axis=axis, keepdims=True),)

        return Tensor._result(out, (self,), grad_fn, "log_softmax")

    def sign_ste(self):
        """ Hard sign (zero maps to +1) with a clipped straight-through
            gradient: ``d/dx = 1`` for ``|x| <= 1``, else ``0``. """
        x = self.data
        return Tensor._result(np.where(x >= 0, 1.0, -1.0), (self,),
                              lambda g: (g * (np.abs(x) <= 1.0),), "sign_ste")


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def concat(tensors: Sequence[Tensor], axis=-1) -> Tensor:
    """ Concatenate tensors along ``axis``. """
    tensors = [_wrap(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return Tensor._result(data, tensors, lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def solve(a: Tensor, b: Tensor) -> Tensor:
    """ Batched solution ``x`` of ``a @ x = b`` for square ``a``. """
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2] or b.ndim != a.ndim:
        raise ShapeError(f"solve needs square (..., n, n) and (..., n, k), got {a.shape} and {b.shape}")
    try:
        x = np.linalg.solve(a.data, b.data)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"Singular system in solve: {e}") from e

    def grad_fn(g):
        gb = np.linalg.solve(np.swapaxes(a.data, -1, -2), g)
        ga = -np.matmul(gb, np.swapaxes(x, -1, -2))
        return ga, gb

    return Tensor._result(x, (a, b), grad_fn, "solve")


##############################################################################
############################### Complex values ###############################
##############################################################################


class ComplexTensor:
    """ A complex tensor stored as a pair of real :class:`Tensor` parts.

        Only the handful of operations needed by the differentiable link
        (elementwise arithmetic, batched matrix products, conjugate
        transposes and indexing) are provided.
    """

    __array_ufunc__ = None

    def __init__(self, re, im=None):
        self.re = _wrap(re)
        self.im = _wrap(im if im is not None else np.zeros(self.re.shape))
        if self.re.shape != self.im.shape:
            raise ShapeError(f"Real part {self.re.shape} and imaginary part {self.im.shape} differ")

    @classmethod
    def constant(cls, value) -> "ComplexTensor":
        value = np.asarray(value)
        return cls(Tensor(value.real), Tensor(value.imag))

    @property
    def shape(self):
        return self.re.shape

    def numpy(self) -> np.ndarray:
        return self.re.data + 1j * self.im.data

    def __repr__(self):
        return f"ComplexTensor(shape={self.shape})"

    def __add__(self, other):
        other = _cwrap(other)
        return ComplexTensor(self.re + other.re, self.im + other.im)

    def __sub__(self, other):
        other = _cwrap(other)
        return ComplexTensor(self.re - other.re, self.im - other.im)

    def __mul__(self, other):
        if isinstance(other, (Tensor, int, float)) or (
                isinstance(other, np.ndarray) and not np.iscomplexobj(other)):
            return ComplexTensor(self.re * other, self.im * other)
        other = _cwrap(other)
        return ComplexTensor(self.re * other.re - self.im * other.im,
                             self.re * other.im + self.im * other.re)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, ComplexTensor) or (not isinstance(other, Tensor) and np.iscomplexobj(other)):
            raise TypeError("Division by complex values is not supported")
        return ComplexTensor(self.re / other, self.im / other)

    def matmul(self, other):
        other = _cwrap(other)
        re = self.re @ other.re - self.im @ other.im
        im = self.re @ other.im + self.im @ other.re
        return ComplexTensor(re, im)

    __matmul__ = matmul

    def __rmatmul__(self, other):
        return _cwrap(other).matmul(self)

    def conj(self):
        return ComplexTensor(self.re, -self.im)

    @property
    def H(self):
        """ Conjugate transpose over the last two axes. """
        return ComplexTensor(self.re.mT, -self.im.mT)

    def __getitem__(self, index):
        return ComplexTensor(self.re[index], self.im[index])

    def reshape(self, *shape):
        return ComplexTensor(self.re.reshape(*shape), self.im.reshape(*shape))

    def transpose(self, *axes):
        return ComplexTensor(self.re.transpose(*axes), self.im.transpose(*axes))

    def sum(self, axis=None, keepdims=False):
        return ComplexTensor(self.re.sum(axis, keepdims), self.im.sum(axis, keepdims))

    def abs2(self) -> Tensor:
        return self.re * self.re + self.im * self.im


def _cwrap(value) -> ComplexTensor:
    if isinstance(value, ComplexTensor):
        return value
    if isinstance(value, Tensor):
        return ComplexTensor(value)
    return ComplexTensor.constant(value)


def complex_solve(a: ComplexTensor, b: ComplexTensor) -> ComplexTensor:
    """ Solve ``a @ x = b`` for complex ``a`` via the equivalent real
        block system ``[[Ar, -Ai], [Ai, Ar]] [Xr; Xi] = [Br; Bi]``. """
    a, b = _cwrap(a), _cwrap(b)
    n = a.shape[-1]
    top = concat([a.re, -a.im], axis=-1)
    bottom = concat([a.im, a.re], axis=-1)
    block = concat([top, bottom], axis=-2)
    rhs = concat([b.re, b.im], axis=-2)
    x = solve(block, rhs)
    return ComplexTensor(x[..., :n, :], x[..., n:, :])


##############################################################################
################################### Layers ###################################
##############################################################################


def _uniform(rng, fan_in, shape):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Node:
    """ Base class of all graph layers.

        A node owns named parameter tensors and optional buffers (state that
        is saved with the model but not trained). :meth:`init` validates the
        incoming per-sample shape, allocates parameters and returns the
        outgoing per-sample shape.
    """

    kind = "node"

    def __init__(self):
        self.node_id = None
        self._params: Dict[str, Tensor] = {}
        self.buffers: Dict[str, np.ndarray] = {}

    def assign_id(self, node_id: str):
        self.node_id = node_id

    def shape_error(self, expected, got):
        return ShapeError(f"Node {self.node_id!r} ({self.kind}) expects input shape "
                          f"{expected}, got {tuple(got)}")

    def init(self, in_shape: Tuple[int, ...], rng: np.random.Generator) -> Tuple[int, ...]:
        return in_shape

    def forward(self, x: Tensor, mode: str) -> Tensor:
        raise NotImplementedError

    def flops(self, in_shape: Tuple[int, ...]) -> int:
        return 0

    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        for name, tensor in self._params.items():
            yield f"{self.node_id}.{name}", tensor

    def named_buffers(self) -> Iterator[Tuple[str, np.ndarray]]:
        for name, array in self.buffers.items():
            yield f"{self.node_id}.{name}", array

    def set_buffer(self, name: str, value):
        self.buffers[name.rsplit(".", 1)[-1]] = np.array(value, dtype=np.float64)

    def config(self) -> dict:
        return {"type": self.kind}


class Dense(Node):
    """ Fully connected layer over the last axis: ``y = x @ W + b``. """

    kind = "dense"

    def __init__(self, in_features: int, out_features: int, bias=True):
        super().__init__()
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        self.bias = bool(bias)

    def init(self, in_shape, rng):
        if not in_shape or in_shape[-1] != self.in_features:
            raise self.shape_error((..., self.in_features), in_shape)
        self._params["weight"] = Tensor(_uniform(rng, self.in_features, (self.in_features, self.out_features)),
                                        requires_grad=True)
        if self.bias:
            self._params["bias"] = Tensor(_uniform(rng, self.in_features, (self.out_features,)),
                                          requires_grad=True)
        return tuple(in_shape[:-1]) + (self.out_features,)

    @property
    def weight(self) -> Tensor:
        return self._params["weight"]

    def forward(self, x, mode):
        if x.shape[-1] != self.in_features:
            raise self.shape_error((..., self.in_features), x.shape)
        y = x @ self._params["weight"]
        if self.bias:
            y = y + self._params["bias"]
        return y

    def flops(self, in_shape):
        rows = int(np.prod(in_shape[:-1])) if len(in_shape) > 1 else 1
        return 2 * rows * self.in_features * self.out_features

    def config(self):
        return {"type": self.kind, "in_features": self.in_features,
                "out_features": self.out_features, "bias": self.bias}


class Conv1x1(Dense):
    """ Pointwise convolution: a dense layer applied independently to every
        position (resource element) of the input. """
    kind = "conv1x1"


class Activation(Node):

    kind = "activation"
    functions = ("relu", "sigmoid", "softmax")

    def __init__(self, function: str):
        super().__init__()
        if function not in self.functions:
            raise ConfigError(f"Unknown activation {function!r}")
        self.function = function

    def forward(self, x, mode):
        if self.function == "relu":
            return x.relu()
        if self.function == "sigmoid":
            return x.sigmoid()
        return x.softmax(axis=-1)

    def config(self):
        return {"type": self.kind, "function": self.function}


class BatchNorm(Node):
    """ Batch normalization over all axes but the last.

        Train mode normalizes with batch statistics and updates the running
        estimates (``running = momentum * running + (1 - momentum) * batch``);
        infer mode normalizes with the running estimates.
    """

    kind = "batchnorm"

    def __init__(self, features: int, momentum=0.9, eps=1e-5):
        super().__init__()
        self.features = int(features)
        self.momentum = float(momentum)
        self.eps = float(eps)

    def init(self, in_shape, rng):
        if not in_shape or in_shape[-1] != self.features:
            raise self.shape_error((..., self.features), in_shape)
        self._params["gamma"] = Tensor(np.ones(self.features), requires_grad=True)
        self._params["beta"] = Tensor(np.zeros(self.features), requires_grad=True)
        self.buffers["running_mean"] = np.zeros(self.features)
        self.buffers["running_var"] = np.ones(self.features)
        return in_shape

    def forward(self, x, mode):
        if x.shape[-1] != self.features:
            raise self.shape_error((..., self.features), x.shape)
        axes = tuple(range(x.ndim - 1))
        if mode == "train":
            mean = x.mean(axis=axes, keepdims=True)
            centered = x - mean
            var = (centered * centered).mean(axis=axes, keepdims=True)
            m = self.momentum
            self.buffers["running_mean"] = m * self.buffers["running_mean"] + (1 - m) * mean.data.reshape(-1)
            self.buffers["running_var"] = m * self.buffers["running_var"] + (1 - m) * var.data.reshape(-1)
            normed = centered / (var + self.eps).sqrt()
        else:
            normed = (x - self.buffers["running_mean"]) / np.sqrt(self.buffers["running_var"] + self.eps)
        return normed * self._params["gamma"] + self._params["beta"]

    def config(self):
        return {"type": self.kind, "features": self.features,
                "momentum": self.momentum, "eps": self.eps}


class LayerNorm(Node):
    """ Layer normalization over the last axis. """

    kind = "layernorm"

    def __init__(self, features: int, eps=1e-5):
        super().__init__()
        self.features = int(features)
        self.eps = float(eps)

    def init(self, in_shape, rng):
        if not in_shape or in_shape[-1] != self.features:
            raise self.shape_error((..., self.features), in_shape)
        self._params["gamma"] = Tensor(np.ones(self.features), requires_grad=True)
        self._params["beta"] = Tensor(np.zeros(self.features), requires_grad=True)
        return in_shape

    def forward(self, x, mode):
        if x.shape[-1] != self.features:
            raise self.shape_error((..., self.features), x.shape)
        mean = x.mean(axis=-1, keepdims=True)
        centered = x - mean
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered / (var + self.eps).sqrt() * self._params["gamma"] + self._params["beta"]

    def config(self):
        return {"type": self.kind, "features": self.features, "eps": self.eps}


class MultiHeadAttention(Node):
    """ Scaled dot-product self attention over a (tokens, dim) sample. """

    kind = "attention"

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ConfigError(f"Attention width {dim} is not divisible by {heads} heads")
        self.dim = int(dim)
        self.heads = int(heads)

    def init(self, in_shape, rng):
        if len(in_shape) != 2 or in_shape[-1] != self.dim:
            raise self.shape_error(("tokens", self.dim), in_shape)
        for name in ("q", "k", "v", "o"):
            self._params[f"w{name}"] = Tensor(_uniform(rng, self.dim, (self.dim, self.dim)), requires_grad=True)
            self._params[f"b{name}"] = Tensor(_uniform(rng, self.dim, (self.dim,)), requires_grad=True)
        return in_shape

    def _split(self, t, batch, tokens):
        return t.reshape(batch, tokens, self.heads, self.dim // self.heads).transpose(0, 2, 1, 3)

    def forward(self, x, mode):
        if x.ndim != 3 or x.shape[-1] != self.dim:
            raise self.shape_error(("tokens", self.dim), x.shape[1:])
        batch, tokens, _ = x.shape
        p = self._params
        q = self._split(x @ p["wq"] + p["bq"], batch, tokens)
        k = self._split(x @ p["wk"] + p["bk"], batch, tokens)
        v = self._split(x @ p["wv"] + p["bv"], batch, tokens)
        scores = (q @ k.mT) * (1.0 / math.sqrt(self.dim // self.heads))
        mixed = scores.softmax(axis=-1) @ v
        merged = mixed.transpose(0, 2, 1, 3).reshape(batch, tokens, self.dim)
        return merged @ p["wo"] + p["bo"]

    def flops(self, in_shape):
        tokens = in_shape[0]
        return 2 * 4 * tokens * self.dim * self.dim + 2 * 2 * tokens * tokens * self.dim

    def config(self):
        return {"type": self.kind, "dim": self.dim, "heads": self.heads}


class Residual(Node):
    """ ``y = x + f(x)`` where ``f`` is a sequence of inner nodes. """

    kind = "residual"

    def __init__(self, nodes: Sequence[Node]):
        super().__init__()
        self.nodes = list(nodes)

    def assign_id(self, node_id):
        super().assign_id(node_id)
        for i, node in enumerate(self.nodes):
            node.assign_id(f"{node_id}/{i}.{node.kind}")

    def init(self, in_shape, rng):
        shape = in_shape
        for node in self.nodes:
            shape = node.init(shape, rng)
        if tuple(shape) != tuple(in_shape):
            raise self.shape_error(in_shape, shape)
        return in_shape

    def forward(self, x, mode):
        y = x
        for node in self.nodes:
            y = node.forward(y, mode)
        return x + y

    def flops(self, in_shape):
        return sum(node.flops(in_shape) for node in self.nodes)

    def named_parameters(self):
        for node in self.nodes:
            yield from node.named_parameters()

    def named_buffers(self):
        for node in self.nodes:
            yield from node.named_buffers()

    def config(self):
        return {"type": self.kind, "nodes": [node.config() for node in self.nodes]}


class Reshape(Node):
    """ Reshape the per-sample part of the input (the batch axis is kept). """

    kind = "reshape"

    def __init__(self, shape: Sequence[int]):
        super().__init__()
        self.target = tuple(int(s) for s in shape)

    def init(self, in_shape, rng):
        size = int(np.prod(in_shape))
        try:
            out = np.empty(size).reshape(self.target).shape
        except ValueError:
            raise self.shape_error(f"{size} elements reshapeable to {self.target}", in_shape) from None
        self._out = tuple(out)
        return self._out

    def forward(self, x, mode):
        return x.reshape((x.shape[0],) + self._out)

    def config(self):
        return {"type": self.kind, "shape": list(self.target)}


class UnitPower(Node):
    """ Normalization to unit average power.

        The power is the mean, over all positions, of the squared norm along
        the last axis. With ``scope="batch"`` it is taken over the whole batch
        (one complex vector per row); with ``scope="sample"`` each sample is
        normalized on its own.

        A batch-scope node tracks a running power estimate in train mode.
        After :meth:`freeze` it divides by that stored estimate instead of the
        batch statistic, which keeps single-row inference well defined.
    """

    kind = "unitpower"

    def __init__(self, scope="batch", momentum=0.9):
        super().__init__()
        if scope not in ("batch", "sample"):
            raise ConfigError(f"Unknown normalization scope {scope!r}")
        self.scope = scope
        self.momentum = float(momentum)

    def init(self, in_shape, rng):
        self.buffers["running_power"] = np.array(1.0)
        self.buffers["frozen"] = np.array(0.0)
        return in_shape

    @property
    def frozen(self) -> bool:
        return bool(self.buffers["frozen"])

    def freeze(self, power: Optional[float] = None):
        if power is not None:
            self.buffers["running_power"] = np.array(float(power))
        self.buffers["frozen"] = np.array(1.0)

    def unfreeze(self):
        self.buffers["frozen"] = np.array(0.0)

    def forward(self, x, mode):
        energy = (x * x).sum(axis=-1)
        if self.scope == "sample":
            power = energy.mean(axis=tuple(range(1, energy.ndim)), keepdims=True) if energy.ndim > 1 else energy
            power = power.reshape(power.shape + (1,) * (x.ndim - power.ndim))
        elif self.frozen:
            power = Tensor(self.buffers["running_power"])
        else:
            power = energy.mean()
            if mode == "train":
                m = self.momentum
                self.buffers["running_power"] = m * self.buffers["running_power"] + (1 - m) * power.data
        if np.any(power.data <= 0):
            raise ZeroVectorError(f"Node {self.node_id!r} cannot normalize an all-zero input")
        return x / power.sqrt()

    def config(self):
        return {"type": self.kind, "scope": self.scope, "momentum": self.momentum}


class SignQuantizer(Node):
    """ One-bit quantizer (``+1``/``-1``) with a straight-through gradient. """

    kind = "sign"

    def forward(self, x, mode):
        return x.sign_ste()


def transformer_block(dim: int, heads: int) -> List[Node]:
    """ Pre-norm transformer block: attention and a feed-forward network
        (hidden width equal to ``dim``), each wrapped in a residual add. """
    return [
        Residual([LayerNorm(dim), MultiHeadAttention(dim, heads)]),
        Residual([LayerNorm(dim), Dense(dim, dim), Activation("relu"), Dense(dim, dim)]),
    ]


_NODE_TYPES = {cls.kind: cls for cls in (Dense, Conv1x1, Activation, BatchNorm, LayerNorm,
                                         MultiHeadAttention, Residual, Reshape, UnitPower,
                                         SignQuantizer)}


def node_from_config(config: dict) -> Node:
    config = dict(config)
    kind = config.pop("type", None)
    if kind not in _NODE_TYPES:
        raise ConfigError(f"Unknown node type {kind!r}")
    if kind == "residual":
        return Residual([node_from_config(c) for c in config.get("nodes", [])])
    try:
        return _NODE_TYPES[kind](**config)
    except TypeError as e:
        raise ConfigError(f"Invalid {kind} node configuration: {e}") from e


##############################################################################
#################################### Graph ###################################
##############################################################################


class Graph:
    """ An ordered sequence of layer nodes with a declared input shape.

        :param nodes: Layer nodes, applied in order.
        :param input_shape: Per-sample input shape. Inputs carry one extra
            leading batch axis; a single unbatched sample is accepted too.
        :param name: Graph name, used as prefix in saved manifests.
        :param seed: Seed for the uniform fan-in weight initialization.
    """

    def __init__(self, nodes: Sequence[Node], input_shape: Sequence[int], name="graph", seed=0):
        self.nodes = list(nodes)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.name = name
        self.seed = int(seed)
        self.mode = "infer"
        self._input = None
        self._output = None
        self.input_grad = None

        rng = derive_rng(self.seed, STREAM_INIT)
        shape = self.input_shape
        for i, node in enumerate(self.nodes):
            node.assign_id(f"{i}.{node.kind}")
            shape = node.init(shape, rng)
        self.output_shape = tuple(shape)

        names = [name for name, _ in self.named_parameters()]
        if len(names) != len(set(names)):
            raise ConfigError(f"Graph {name!r} has duplicate parameter names")

    def __repr__(self):
        return f"Graph({self.name!r}, nodes={len(self.nodes)}, params={self.count_parameters()})"

    def train(self):
        self.mode = "train"
        return self

    def eval(self):
        self.mode = "infer"
        return self

    def forward(self, x: Union[Tensor, np.ndarray], mode: Optional[str] = None) -> Tensor:
        """ Run all nodes on ``x``.

            In train mode the tape is recorded and the input and output are
            cached for :meth:`backward`. In infer mode nothing is recorded and
            no parameter or buffer changes.
        """
        mode = mode or self.mode
        if mode not in ("train", "infer"):
            raise ConfigError(f"Unknown graph mode {mode!r}")
        leaf = not isinstance(x, Tensor)
        if leaf:
            x = Tensor(x, requires_grad=(mode == "train"), name=f"{self.name}.input")
        n = len(self.input_shape)
        if x.shape[x.ndim - n:] != self.input_shape or x.ndim not in (n, n + 1):
            raise ShapeError(f"Node 'input' of graph {self.name!r} expects shape "
                             f"(batch,) + {self.input_shape}, got {x.shape}")
        single = x.ndim == n
        h = x.reshape((1,) + x.shape) if single else x

        if mode == "train":
            for node in self.nodes:
                h = node.forward(h, mode)
        else:
            with no_grad():
                for node in self.nodes:
                    h = node.forward(h, mode)
        out = h.reshape(h.shape[1:]) if single else h

        if mode == "train":
            self._input, self._output = (x if leaf else None), out
        else:
            self._input = self._output = None
        return out

    __call__ = forward

    def predict(self, x) -> np.ndarray:
        """ Infer-mode forward on a plain array, returning a plain array. """
        return self.forward(np.asarray(x, dtype=np.float64), mode="infer").data

    def backward(self, output_grad) -> Dict[str, List[np.ndarray]]:
        """ Back-propagate ``output_grad`` from the cached train-mode output.

            Returns a mapping from node id to the gradients of that node's
            parameters. The gradient with respect to the graph input is
            stored in :attr:`input_grad`.
        """
        if self._output is None:
            raise GraphStateError(f"Graph {self.name!r}: backward() called before a train-mode forward()")
        self.zero_grad()
        if self._input is not None:
            self._input.grad = None
        self._output.backward(output_grad)
        self.input_grad = self._input.grad if self._input is not None else None
        grads: Dict[str, List[np.ndarray]] = {}
        for name, tensor in self.named_parameters():
            node_id = name.rsplit(".", 1)[0]
            grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
            grads.setdefault(node_id, []).append(grad)
        return grads

    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        for node in self.nodes:
            yield from node.named_parameters()

    def parameters(self) -> List[Tensor]:
        return [t for _, t in self.named_parameters()]

    def named_buffers(self) -> Iterator[Tuple[str, np.ndarray]]:
        for node in self.nodes:
            yield from node.named_buffers()

    def iter_nodes(self) -> Iterator[Node]:
        stack = list(reversed(self.nodes))
        while stack:
            node = stack.pop()
            yield node
            if isinstance(node, Residual):
                stack.extend(reversed(node.nodes))

    def zero_grad(self):
        for tensor in self.parameters():
            tensor.grad = None

    def count_parameters(self) -> int:
        """ Total number of trainable scalars (buffers excluded). """
        return int(sum(t.size for t in self.parameters()))

    def count_flops(self) -> int:
        """ Floating point operations per sample, counted as two per
            multiply in dense, pointwise-convolution and attention layers. """
        shape, total = self.input_shape, 0
        for node in self.nodes:
            total += node.flops(shape)
            shape = _propagate(node, shape)
        return int(total)

    def config(self) -> dict:
        return {"name": self.name, "input_shape": list(self.input_shape), "seed": self.seed,
                "nodes": [node.config() for node in self.nodes]}

    @classmethod
    def from_config(cls, config: dict) -> "Graph":
        try:
            nodes = [node_from_config(c) for c in config["nodes"]]
            return cls(nodes, config["input_shape"], name=config.get("name", "graph"),
                       seed=config.get("seed", 0))
        except KeyError as e:
            raise ConfigError(f"Graph configuration lacks {e}") from e

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {name: tensor.data.copy() for name, tensor in self.named_parameters()}
        state.update({name: np.array(array, copy=True) for name, array in self.named_buffers()})
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        params = dict(self.named_parameters())
        buffers = {name: node for node in self.iter_nodes() for name, _ in node.named_buffers()
                   if not isinstance(node, Residual)}
        missing = sorted((set(params) | set(buffers)) - set(state))
        if missing:
            raise ConfigError(f"Graph {self.name!r} state lacks: {', '.join(missing)}")
        for name, tensor in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != tensor.shape:
                raise ShapeError(f"Parameter {name!r} has shape {tensor.shape}, state has {value.shape}")
            tensor.data = value.copy()
        for name, node in buffers.items():
            node.set_buffer(name, state[name])


def _propagate(node: Node, shape):
    if isinstance(node, Residual):
        return shape
    if isinstance(node, Dense):
        return tuple(shape[:-1]) + (node.out_features,)
    if isinstance(node, Reshape):
        return node._out
    return shape


##############################################################################
################################## Optimizer #################################
##############################################################################


class Adam:
    """ Adaptive moment estimation.

        :param params: Parameter tensors to update in place.
        :param lr: Learning rate.
        :param betas: Decay rates of the first and second moment estimates.
        :param eps: Denominator offset.
    """

    def __init__(self, params: Sequence[Tensor], lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.betas = (float(betas[0]), float(betas[1]))
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, grads: Optional[Sequence[np.ndarray]] = None):
        """ Apply one update. Gradients default to each parameter's ``grad``
            (missing gradients count as zero). """
        if grads is None:
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        if len(grads) != len(self.params):
            raise ShapeError(f"Got {len(grads)} gradients for {len(self.params)} parameters")
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if np.shape(g) != p.shape:
                raise ShapeError(f"Gradient {i} has shape {np.shape(g)}, parameter has {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"Non-finite gradient for parameter {p.name or i} at step {self.t + 1}")

        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {"t": np.array(float(self.t)), "lr": np.array(self.lr)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            state[f"m.{i}"] = m.copy()
            state[f"v.{i}"] = v.copy()
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        for i, p in enumerate(self.params):
            m, v = state.get(f"m.{i}"), state.get(f"v.{i}")
            if m is None or v is None:
                raise ConfigError(f"Optimizer state lacks moments for parameter {i}")
            if m.shape != p.shape or v.shape != p.shape:
                raise ShapeError(f"Optimizer moments {i} do not match parameter shape {p.shape}")
            self.m[i] = np.array(m, dtype=np.float64)
            self.v[i] = np.array(v, dtype=np.float64)
        self.t = int(state["t"])
        self.lr = float(state.get("lr", self.lr))


##############################################################################
################################ Serialization ###############################
##############################################################################

MANIFEST_FORMAT = "cmolink-arrays"


def _paths(path) -> Tuple[str, str]:
    path = os.fspath(path)
    stem = path[:-5] if path.endswith(".json") else path
    return stem + ".json", stem + ".bin"


def save_arrays(path, arrays: Dict[str, np.ndarray], meta: Optional[dict] = None) -> str:
    """ Write ``arrays`` as a JSON manifest plus a little-endian float64 blob.

        The manifest names every array with its shape and byte offset into
        the blob. Returns the manifest path.
    """
    manifest_path, blob_path = _paths(path)
    entries, offset = [], 0
    with open(blob_path, "wb") as fp:
        for name, array in arrays.items():
            raw = np.ascontiguousarray(np.asarray(array, dtype=np.float64)).astype("<f8").tobytes()
            entries.append({"name": name, "shape": list(np.shape(array)), "offset": offset})
            fp.write(raw)
            offset += len(raw)
    manifest = {"format": MANIFEST_FORMAT, "version": 1, "blob": os.path.basename(blob_path),
                "bytes": offset, "tensors": entries, "meta": meta or {}}
    with open(manifest_path, "w", encoding="utf8") as fp:
        json.dump(manifest, fp, indent=1)
    log.debug("Saved %d arrays (%d bytes) to %s", len(entries), offset, manifest_path)
    return manifest_path


def load_arrays(path) -> Tuple[Dict[str, np.ndarray], dict]:
    """ Read a manifest written by :func:`save_arrays`. """
    manifest_path, _ = _paths(path)
    try:
        with open(manifest_path, "r", encoding="utf8") as fp:
            manifest = json.load(fp)
        if manifest.get("format") != MANIFEST_FORMAT:
            raise ConfigError(f"{manifest_path} is not a {MANIFEST_FORMAT} manifest")
        blob_path = os.path.join(os.path.dirname(manifest_path), manifest["blob"])
        with open(blob_path, "rb") as fp:
            blob = fp.read()
    except OSError as e:
        raise ConfigError(f"Cannot read model files for {path}: {e}") from e
    except (json.JSONDecodeError, KeyError) as e:
        raise ConfigError(f"Invalid manifest {manifest_path}: {e}") from e
    if len(blob) != manifest.get("bytes", len(blob)):
        raise ConfigError(f"Blob size {len(blob)} does not match manifest ({manifest['bytes']} bytes)")
    arrays = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(blob, dtype="<f8", count=count, offset=entry["offset"])
        arrays[entry["name"]] = data.astype(np.float64).reshape(shape)
    return arrays, manifest.get("meta", {})


def save_graph(graph: Graph, path, meta: Optional[dict] = None) -> str:
    meta = dict(meta or {})
    meta["graph"] = graph.config()
    return save_arrays(path, graph.state_dict(), meta)


def load_graph(path) -> Graph:
    arrays, meta = load_arrays(path)
    if "graph" not in meta:
        raise ConfigError(f"{path} does not describe a graph")
    graph = Graph.from_config(meta["graph"])
    graph.load_state_dict(arrays)
    return graph
