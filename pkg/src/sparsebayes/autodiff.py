"""Minimal tape-based reverse-mode differentiation over dense numpy arrays.

Only the operations needed by the stochastic LWTA objective are provided.
Every operation records its inputs and a vector-Jacobian product on the
tape of its first tracked operand; ``Tape.gradient`` replays the tape
backwards.

Examples
--------
>>> tape = Tape()
>>> x = tape.var(np.array([1.0, 2.0]), name="x")
>>> y = (x * x).sum()
>>> tape.gradient(y, [x])[0]
array([2., 4.])
"""

from __future__ import annotations

import numpy as np
from scipy.special import digamma as _digamma
from scipy.special import expit, gammaln as _gammaln, polygamma

__all__ = [
    "Tape",
    "Var",
    "concat",
    "cumsum",
    "digamma",
    "einsum",
    "exp",
    "gammaln",
    "log",
    "log1mexp",
    "log_sigmoid",
    "logsumexp",
    "sigmoid",
    "softmax",
    "softplus",
]


class Tape:
    """Records operations in execution order."""

    def __init__(self):
        self._nodes = []

    def var(self, value, name=None) -> "Var":
        """A tracked leaf holding a float copy of ``value``."""
        return Var(np.array(value, dtype=float), self, (), name)

    def _record(self, value, parents):
        node = Var(value, self, tuple(parents))
        self._nodes.append(node)
        return node

    def gradient(self, output: "Var", wrt):
        """Gradients of the scalar ``output`` with respect to each of ``wrt``."""
        if np.size(output.value) != 1:
            raise ValueError("gradient needs a scalar output")
        adj = {id(output): np.ones_like(output.value)}
        for node in reversed(self._nodes):
            g = adj.pop(id(node), None)
            if g is None:
                continue
            for parent, vjp in node.parents:
                contrib = vjp(g)
                key = id(parent)
                adj[key] = adj[key] + contrib if key in adj else contrib
        return [adj.get(id(w), np.zeros_like(w.value)) for w in wrt]


class Var:
    """A value on a tape; arithmetic with arrays or other ``Var`` is recorded."""

    __array_ufunc__ = None

    def __init__(self, value, tape, parents=(), name=None):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var({self.value!r})"

    def __add__(self, other):
        return _add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return _add(self, -_lift(other, self.tape))

    def __rsub__(self, other):
        return _add(-self, other)

    def __mul__(self, other):
        return _mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _mul(self, _reciprocal(_lift(other, self.tape)))

    def __rtruediv__(self, other):
        return _mul(_reciprocal(self), other)

    def __neg__(self):
        return _unary(self, -self.value, lambda g: -g)

    def __pow__(self, p):
        if isinstance(p, Var):
            raise TypeError("only constant exponents are supported")
        v = self.value
        return _unary(self, v ** p, lambda g: g * p * v ** (p - 1))

    def __getitem__(self, key):
        v = self.value

        def vjp(g):
            out = np.zeros_like(v)
            np.add.at(out, key, g)
            return out

        return _unary(self, v[key], vjp)

    def sum(self, axis=None, keepdims=False):
        v = self.value
        out = np.sum(v, axis=axis, keepdims=keepdims)

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, v.shape)

        return _unary(self, out, vjp)

    def reshape(self, *shape):
        v = self.value
        return _unary(self, v.reshape(*shape), lambda g: g.reshape(v.shape))


def _lift(x, tape):
    return x if isinstance(x, Var) else Var(np.asarray(x, dtype=float), None)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _node(value, parents):
    """Record ``value`` on the tape of the first tracked parent."""
    tracked = [(p, f) for p, f in parents if p.tape is not None]
    if not tracked:
        return Var(value, None)
    return tracked[0][0].tape._record(value, tracked)


def _unary(x, value, vjp):
    return _node(value, [(x, vjp)])


def _add(a, b):
    tape = a.tape if isinstance(a, Var) else None
    a, b = _lift(a, tape), _lift(b, tape)
    out = a.value + b.value
    return _node(out, [(a, lambda g: _unbroadcast(g, a.value.shape)),
                       (b, lambda g: _unbroadcast(g, b.value.shape))])


def _mul(a, b):
    tape = a.tape if isinstance(a, Var) else None
    a, b = _lift(a, tape), _lift(b, tape)
    av, bv = a.value, b.value
    return _node(av * bv, [(a, lambda g: _unbroadcast(g * bv, av.shape)),
                           (b, lambda g: _unbroadcast(g * av, bv.shape))])


def _reciprocal(x):
    v = x.value
    return _unary(x, 1.0 / v, lambda g: -g / v ** 2)


def exp(x):
    out = np.exp(x.value)
    return _unary(x, out, lambda g: g * out)


def log(x):
    v = x.value
    return _unary(x, np.log(v), lambda g: g / v)


def sigmoid(x):
    out = expit(x.value)
    return _unary(x, out, lambda g: g * out * (1.0 - out))


def softplus(x):
    """``log(1 + e^x)``, stable for large ``|x|``."""
    v = x.value
    return _unary(x, np.logaddexp(0.0, v), lambda g: g * expit(v))


def log_sigmoid(x):
    """``log sigmoid(x) = -softplus(-x)``."""
    v = x.value
    return _unary(x, -np.logaddexp(0.0, -v), lambda g: g * expit(-v))


def log1mexp(x):
    """``log(1 - e^x)`` for ``x < 0``."""
    v = x.value
    out = np.where(v > -0.6931471805599453, np.log(-np.expm1(v)), np.log1p(-np.exp(v)))
    def vjp(g):
        with np.errstate(over="ignore"):
            return g / -np.expm1(-v)

    return _unary(x, out, vjp)


def logsumexp(x, axis=-1, keepdims=False):
    v = x.value
    m = np.max(v, axis=axis, keepdims=True)
    s = np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True)) + m
    out = s if keepdims else np.squeeze(s, axis=axis)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return g * np.exp(v - s)

    return _unary(x, out, vjp)


def softmax(x, axis=-1):
    return exp(x - logsumexp(x, axis=axis, keepdims=True))


def cumsum(x, axis=0):
    v = x.value

    def vjp(g):
        return np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis)

    return _unary(x, np.cumsum(v, axis=axis), vjp)


def digamma(x):
    v = x.value
    return _unary(x, _digamma(v), lambda g: g * polygamma(1, v))


def gammaln(x):
    v = x.value
    return _unary(x, _gammaln(v), lambda g: g * _digamma(v))


def concat(xs, axis=-1):
    tape = next((x.tape for x in xs if isinstance(x, Var) and x.tape is not None), None)
    xs = [_lift(x, tape) for x in xs]
    sizes = np.cumsum([x.value.shape[axis] for x in xs])[:-1]
    out = np.concatenate([x.value for x in xs], axis=axis)

    def piece(i):
        return lambda g: np.split(g, sizes, axis=axis)[i]

    return _node(out, [(x, piece(i)) for i, x in enumerate(xs)])


def einsum(spec, a, b):
    """Two-operand ``np.einsum`` without repeated indices inside an operand."""
    tape = a.tape if isinstance(a, Var) else (b.tape if isinstance(b, Var) else None)
    a, b = _lift(a, tape), _lift(b, tape)
    ins, out_spec = spec.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    av, bv = a.value, b.value
    out = np.einsum(spec, av, bv)

    def grad_a(g):
        return _expand_to(np.einsum(f"{out_spec},{sb}->{_kept(sa, out_spec + sb)}", g, bv), sa, av.shape,
                          out_spec + sb)

    def grad_b(g):
        return _expand_to(np.einsum(f"{out_spec},{sa}->{_kept(sb, out_spec + sa)}", g, av), sb, bv.shape,
                          out_spec + sa)

    return _node(out, [(a, grad_a), (b, grad_b)])


def _kept(target, available):
    return "".join(c for c in target if c in available)


def _expand_to(g, target, shape, available):
    """Broadcast back indices of ``target`` summed away in the forward pass."""
    kept = _kept(target, available)
    if kept == target:
        return g
    idx = [slice(None) if c in kept else None for c in target]
    return np.broadcast_to(g[tuple(idx)], shape)
