"""Tape-based reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tensor` wraps a numpy array and remembers the operation that
produced it.  Calling :func:`backward` on a scalar tensor walks the recorded
graph once in reverse topological order and returns the gradient of that
scalar with respect to every reachable leaf.

Graphs are dynamic (rebuilt per forward pass) and single-threaded; distinct
graphs may be evaluated concurrently as long as each graph stays on one
thread.  Tensor data is treated as immutable once created.
"""

from __future__ import annotations

import numpy as np

from . import linalg
from .errors import DomainError, NumericError, ShapeError

_DEBUG_CHECKS = False


def set_debug_checks(enabled):
    """Toggle per-op validation that forward outputs are finite."""
    global _DEBUG_CHECKS
    previous = _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)
    return previous


class Tensor:
    """A node in the differentiation graph.

    ``data`` is always a float64 ndarray (possibly 0-d).  ``grad`` is the
    accumulated gradient for leaves after :func:`backward`.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None,
                 _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self.name = name
        self._parents = _parents
        self._backward = _backward
        if _DEBUG_CHECKS and not np.all(np.isfinite(self.data)):
            raise NumericError(
                f"non-finite values produced by op {name or '<input>'}"
            )

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_leaf(self):
        return not self._parents

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    # operator sugar; scalars and arrays are lifted to constant tensors
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad=False, name=None):
    return Tensor(data, requires_grad=requires_grad, name=name)


def parameter(data, name):
    """A trainable leaf."""
    return Tensor(data, requires_grad=True, name=name)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} "
                         "do not broadcast") from None


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _make(data, parents, backward, name):
    if not any(p.requires_grad for p in parents):
        return Tensor(data, _parents=(), _backward=None, name=name)
    return Tensor(data, _parents=tuple(parents), _backward=backward, name=name)


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b):
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "mul")

    def bw(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b):
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "div")

    def bw(g):
        return (_unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(a.data / b.data, (a, b), bw, "div")


def neg(a):
    a = _lift(a)

    def bw(g):
        return (-g,)

    return _make(-a.data, (a,), bw, "neg")


def matmul(a, b):
    a, b = _lift(a), _lift(b)
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2):
        raise ShapeError(f"matmul: 1-D/2-D operands only, got {ad.shape} @ {bd.shape}")
    inner_a = ad.shape[-1]
    inner_b = bd.shape[0]
    if inner_a != inner_b:
        raise ShapeError(f"matmul: inner dimensions differ: {ad.shape} @ {bd.shape}")
    out = ad @ bd

    def bw(g):
        if ad.ndim == 2 and bd.ndim == 2:
            return g @ bd.T, ad.T @ g
        if ad.ndim == 2 and bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        if ad.ndim == 1 and bd.ndim == 2:
            return bd @ g, np.outer(ad, g)
        return g * bd, g * ad  # 1-D dot

    return _make(out, (a, b), bw, "matmul")


def transpose(a):
    a = _lift(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: matrix required, got shape {a.data.shape}")

    def bw(g):
        return (g.T,)

    return _make(a.data.T, (a,), bw, "transpose")


# ---------------------------------------------------------------------------
# reductions


def sum_(a, axis=None, keepdims=False):
    a = _lift(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _make(out, (a,), bw, "sum")


def mean_(a, axis=None, keepdims=False):
    a = _lift(a)
    if axis is None:
        count = a.data.size
    else:
        count = a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# elementwise functions


def exp(a):
    a = _lift(a)
    with np.errstate(over="ignore"):  # overflow surfaces via debug checks
        out = np.exp(a.data)

    def bw(g):
        return (g * out,)

    return _make(out, (a,), bw, "exp")


def log(a):
    a = _lift(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log: nonpositive input")

    def bw(g):
        return (g / a.data,)

    return _make(np.log(a.data), (a,), bw, "log")


def sqrt(a):
    a = _lift(a)
    if np.any(a.data < 0.0):
        raise DomainError("sqrt: negative input")
    out = np.sqrt(a.data)

    def bw(g):
        return (g / (2.0 * out),)

    return _make(out, (a,), bw, "sqrt")


def tanh(a):
    a = _lift(a)
    out = np.tanh(a.data)

    def bw(g):
        return (g * (1.0 - out * out),)

    return _make(out, (a,), bw, "tanh")


def sinh(a):
    a = _lift(a)

    def bw(g):
        return (g * np.cosh(a.data),)

    return _make(np.sinh(a.data), (a,), bw, "sinh")


def cosh(a):
    a = _lift(a)

    def bw(g):
        return (g * np.sinh(a.data),)

    return _make(np.cosh(a.data), (a,), bw, "cosh")


def asinh(a):
    a = _lift(a)

    def bw(g):
        return (g / np.sqrt(1.0 + a.data * a.data),)

    return _make(np.arcsinh(a.data), (a,), bw, "asinh")


def abs_(a):
    a = _lift(a)

    def bw(g):
        return (g * np.sign(a.data),)

    return _make(np.abs(a.data), (a,), bw, "abs")


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(a):
    a = _lift(a)
    out = np.logaddexp(0.0, a.data)

    def bw(g):
        return (g * _sigmoid(np.asarray(a.data)),)

    return _make(out, (a,), bw, "softplus")


def clip(a, lo, hi):
    """Clamp values; gradient flows only through the interior."""
    a = _lift(a)
    out = np.clip(a.data, lo, hi)
    interior = (a.data > lo) & (a.data < hi)

    def bw(g):
        return (g * interior,)

    return _make(out, (a,), bw, "clip")


def where(mask, a, b):
    """Select from ``a`` where ``mask`` holds, from ``b`` elsewhere.

    ``mask`` is a constant boolean array; gradient does not flow through it.
    """
    a, b = _lift(a), _lift(b)
    mask = np.asarray(mask, dtype=bool)
    _check_broadcast(a, b, "where")
    out = np.where(mask, a.data, b.data)

    def bw(g):
        return (_unbroadcast(np.where(mask, g, 0.0), a.data.shape),
                _unbroadcast(np.where(mask, 0.0, g), b.data.shape))

    return _make(out, (a, b), bw, "where")


def softmax(a, axis=-1):
    """Numerically stable softmax along ``axis``."""
    a = _lift(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return _make(out, (a,), bw, "softmax")


# ---------------------------------------------------------------------------
# structural ops


def gather_rows(a, index):
    """Select rows (axis 0) by an integer index array."""
    a = _lift(a)
    index = np.asarray(index)
    if index.ndim != 1:
        raise ShapeError(f"gather_rows: 1-D index required, got {index.shape}")
    if np.any(index < 0) or np.any(index >= a.data.shape[0]):
        raise ShapeError(
            f"gather_rows: index out of range for {a.data.shape[0]} rows"
        )
    out = a.data[index]

    def bw(g):
        acc = np.zeros_like(a.data)
        np.add.at(acc, index, g)
        return (acc,)

    return _make(out, (a,), bw, "gather_rows")


def tril(a, k=0):
    a = _lift(a)
    if a.data.ndim != 2:
        raise ShapeError(f"tril: matrix required, got shape {a.data.shape}")

    def bw(g):
        return (np.tril(g, k),)

    return _make(np.tril(a.data, k), (a,), bw, "tril")


def diagonal(a):
    a = _lift(a)
    if a.data.ndim != 2 or a.data.shape[0] != a.data.shape[1]:
        raise ShapeError(f"diagonal: square matrix required, got {a.data.shape}")

    def bw(g):
        return (np.diag(g),)

    return _make(np.diagonal(a.data).copy(), (a,), bw, "diagonal")


def diag_embed(a):
    a = _lift(a)
    if a.data.ndim != 1:
        raise ShapeError(f"diag_embed: vector required, got shape {a.data.shape}")

    def bw(g):
        return (np.diagonal(g).copy(),)

    return _make(np.diag(a.data), (a,), bw, "diag_embed")


def concat(tensors, axis=0):
    tensors = [_lift(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    return _make(out, tuple(tensors), bw, "concat")


# ---------------------------------------------------------------------------
# matrix functionals


def spectral_norm(a):
    """Largest singular value; gradient is the outer product of the top
    singular vectors."""
    a = _lift(a)
    sigma, u, v = linalg.spectral_norm_power(a.data)

    def bw(g):
        return (g * np.outer(u, v),)

    return _make(sigma, (a,), bw, "spectral_norm")


def logabsdet(a):
    """log|det| of a square matrix via LU; gradient is inverse-transpose."""
    a = _lift(a)
    if a.data.ndim != 2 or a.data.shape[0] != a.data.shape[1]:
        raise ShapeError(f"logabsdet: square matrix required, got {a.data.shape}")
    sign, value = linalg.slogdet_lu(a.data)
    if sign == 0.0:
        raise NumericError("logabsdet: singular matrix")

    def bw(g):
        return (g * linalg.inverse_lu(a.data).T,)

    return _make(value, (a,), bw, "logabsdet")


# ---------------------------------------------------------------------------
# backward pass


def _topo_order(root):
    """Reverse-topological order via iterative depth-first search."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss, accumulate=True):
    """Gradients of a scalar ``loss`` w.r.t. every reachable leaf that
    requires grad.

    Returns a dict mapping leaf Tensor -> gradient array.  With
    ``accumulate`` each leaf's ``.grad`` is also summed into (starting from
    zero when unset), which is what the single-threaded trainer uses;
    threaded callers pass ``accumulate=False`` and reduce the dicts
    themselves.
    """
    if loss.data.ndim != 0:
        raise ShapeError(f"backward: scalar loss required, got shape {loss.data.shape}")
    adjoint = {id(loss): np.ones(())}
    leaf_grads = {}
    for node in reversed(_topo_order(loss)):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.requires_grad:
                leaf_grads[node] = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=np.float64)
            key = id(parent)
            if key in adjoint:
                adjoint[key] = adjoint[key] + pg
            else:
                adjoint[key] = pg
    if accumulate:
        for leaf, g in leaf_grads.items():
            leaf.grad = g if leaf.grad is None else leaf.grad + g
    return leaf_grads


# ---------------------------------------------------------------------------
# optimizer


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self):
        self.step = 0
        self.m = {}
        self.v = {}


def adam_step(params, grads, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update, in place on ``params``.

    ``grads`` maps parameter -> gradient array; parameters without an entry
    are treated as having zero gradient.
    """
    state.step += 1
    t = state.step
    for p in params:
        g = grads.get(p)
        if g is None:
            g = np.zeros_like(p.data)
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ShapeError(
                f"adam_step: gradient shape {g.shape} does not match "
                f"parameter {p.name!r} shape {p.data.shape}"
            )
        if not np.all(np.isfinite(g)):
            raise NumericError(f"adam_step: non-finite gradient for {p.name!r}")
        key = id(p)
        m = state.m.get(key)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[key] = np.zeros_like(p.data)
        v = state.v[key]
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[key] = m
        state.v[key] = v
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
