"""Minimal reverse-mode differentiation over dense float64 arrays, plus Adam.

Values are :class:`Tensor` objects wrapping numpy arrays.  A tensor either
belongs to a :class:`Tape` (it was produced from a watched leaf) or is a
constant.  Operations on constants are evaluated eagerly and never recorded,
so the same model code runs with or without gradients.

    tape = Tape()
    w = tape.watch(np.ones(3))
    y = (w * w).sum()
    grads = backward(tape, y)        # {id of leaf: array}
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ContractError(ValueError):
    """Raised when a caller violates an operation's preconditions."""


class NumericError(ArithmeticError):
    """Raised when a non-finite value shows up during differentiation."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class Tape:
    """Ordered record of primitive operations.

    Nodes are appended as they are created, so the record is topologically
    sorted by construction.  A tape supports exactly one backward pass.
    """

    def __init__(self):
        self.nodes = []       # (output Tensor, parents, vjp)
        self.leaves = []
        self.consumed = False

    def watch(self, array, name=None):
        """Register ``array`` as a differentiable leaf and return its tensor."""
        t = Tensor(np.array(array, dtype=np.float64), tape=self)
        t.name = name
        t.index = len(self.nodes)
        self.nodes.append((t, (), None))
        self.leaves.append(t)
        return t

    def _record(self, data, parents, vjp):
        out = Tensor(data, tape=self)
        out.index = len(self.nodes)
        self.nodes.append((out, parents, vjp))
        return out


class Tensor:
    __slots__ = ("data", "tape", "index", "name")
    __array_priority__ = 100.0

    def __init__(self, data, tape=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.index = -1
        self.name = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def __repr__(self):
        tag = "const" if self.tape is None else f"node {self.index}"
        return f"Tensor({tag}, shape={self.data.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(*xs):
    tape = None
    for x in xs:
        if x.tape is not None:
            if tape is not None and x.tape is not tape:
                raise ContractError("operands recorded on different tapes")
            tape = x.tape
    if tape is not None and tape.consumed:
        raise ContractError("tape already consumed by backward")
    return tape


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _op(data, parents, vjp):
    tape = _tape_of(*parents)
    if tape is None:
        return Tensor(data)
    return tape._record(data, parents, vjp)


# --- primitives -------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _op(a.data + b.data, (a, b),
               lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _op(a.data - b.data, (a, b),
               lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _op(a.data * b.data, (a, b),
               lambda g: (_unbroadcast(g * b.data, a.shape),
                          _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _op(out, (a, b),
               lambda g: (_unbroadcast(g / b.data, a.shape),
                          _unbroadcast(-g * out / b.data, b.shape)))


def matmul(a, b):
    """Matrix product with numpy batching rules (operands at least 2-d)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ContractError("matmul operands must be at least 2-d")

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _op(a.data @ b.data, (a, b), vjp)


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _op(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a):
    a = as_tensor(a)
    # derivative at exactly 0 is taken as 0
    mask = a.data > 0
    return _op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


hinge = relu
"""``[x]^+ = max(x, 0)``; same primitive as :func:`relu`."""


def identity(a):
    return as_tensor(a)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _op(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _op(np.log(a.data), (a,), lambda g: (g / a.data,))


def asinh(a):
    a = as_tensor(a)
    return _op(np.arcsinh(a.data), (a,), lambda g: (g / np.sqrt(1.0 + a.data ** 2),))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _op(out, (a,), lambda g: (g * 0.5 / out,))


def clip(a, lo=None, hi=None):
    """Elementwise clip with constant bounds; gradient passes where unclipped.

    Applies ``max`` then ``min``, so if ``lo > hi`` the upper bound wins.
    """
    a = as_tensor(a)
    out = a.data
    if lo is not None:
        out = np.maximum(out, lo)
    if hi is not None:
        out = np.minimum(out, hi)
    mask = out == a.data
    return _op(out, (a,), lambda g: (g * mask,))


def tsum(a, axis=None):
    a = as_tensor(a)
    out = a.data.sum(axis=axis)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _op(out, (a,), vjp)


def mean(a, axis=None):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return tsum(a, axis) * (1.0 / n)


def take(a, key):
    a = as_tensor(a)

    def vjp(g):
        full = np.zeros(a.shape)
        np.add.at(full, key, g)
        return (full,)

    return _op(a.data[key], (a,), vjp)


def reshape(a, shape):
    a = as_tensor(a)
    return _op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def swapaxes(a, i, j):
    a = as_tensor(a)
    return _op(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def concat(xs, axis=-1):
    xs = [as_tensor(x) for x in xs]
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return _op(np.concatenate([x.data for x in xs], axis=axis), tuple(xs),
               lambda g: tuple(np.split(g, sizes, axis=axis)))


# --- reverse pass -----------------------------------------------------------

def backward(tape, output):
    """Return ``{leaf.index: d output / d leaf}`` for every watched leaf.

    The tape is single-use; calling backward on it again raises.
    """
    if not isinstance(output, Tensor) or output.tape is not tape:
        raise ContractError("output is not a node of this tape")
    if output.data.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    if tape.consumed:
        raise ContractError("tape already consumed by backward")
    tape.consumed = True

    adj = [None] * len(tape.nodes)
    adj[output.index] = np.ones_like(output.data)
    for i in range(output.index, -1, -1):
        g = adj[i]
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite adjoint at node {i}", node=i)
        node, parents, vjp = tape.nodes[i]
        if vjp is None:
            continue
        for p, gp in zip(parents, vjp(g)):
            if p.tape is None:
                continue
            adj[p.index] = gp if adj[p.index] is None else adj[p.index] + gp
    return {
        leaf.index: (adj[leaf.index] if adj[leaf.index] is not None
                     else np.zeros_like(leaf.data))
        for leaf in tape.leaves
    }


def grad(f, *arrays):
    """Gradient of scalar ``f(*tensors)`` with respect to each input array."""
    tape = Tape()
    leaves = [tape.watch(a) for a in arrays]
    out = f(*leaves)
    g = backward(tape, out)
    return [g[leaf.index] for leaf in leaves]


# --- Adam -------------------------------------------------------------------

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr):
    """One in-place Adam update of the arrays in ``params`` (a name -> array dict)."""
    if lr < 0:
        raise ContractError("learning rate must be nonnegative")
    for k, p in params.items():
        if k not in grads or np.shape(grads[k]) != p.shape:
            raise ContractError(f"gradient for {k!r} missing or misshapen")
        if k in state.m and state.m[k].shape != p.shape:
            raise ContractError(f"optimizer state for {k!r} has the wrong shape")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        m = state.m.setdefault(k, np.zeros_like(p))
        v = state.v.setdefault(k, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        if lr == 0:
            continue
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state
