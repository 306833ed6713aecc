"""Reverse-mode gradients over the package's fixed kernel set.

``Var`` wraps an ndarray and records every operation applied to it; calling
``backward()`` on a scalar result accumulates gradients into all reachable
``Var`` leaves. The helpers at the bottom (``gelu``, ``softmax_rows``,
``layer_norm``, ``vstack``, ``hstack``, ``total``) accept plain arrays or
``Var`` objects, so the encoder forward is written once and serves both the
plain fast path and the gradient path. Analytic gradients are validated
against central finite differences by the verification suite.
"""

from __future__ import annotations

import math

import numpy as np

from . import numerics


def _accumulate(v, g):
    if isinstance(v, Var):
        v.grad = g if v.grad is None else v.grad + g


class Var:
    """An ndarray plus the tape edge that produced it."""

    # Keep numpy from absorbing Var into object arrays; binary ops with an
    # ndarray on the left then fall through to the __r*__ methods here.
    __array_ufunc__ = None
    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    @property
    def T(self) -> "Var":
        out = Var(self.value.T, (self,))
        out._backward = lambda g: _accumulate(self, g.T)
        return out

    def __add__(self, other):
        ov = value_of(other)
        parents = (self, other) if isinstance(other, Var) else (self,)
        out = Var(self.value + ov, parents)

        def backward(g):
            _accumulate(self, g)
            _accumulate(other, g)

        out._backward = backward
        return out

    __radd__ = __add__

    def __mul__(self, other):
        ov = value_of(other)
        parents = (self, other) if isinstance(other, Var) else (self,)
        out = Var(self.value * ov, parents)

        def backward(g):
            _accumulate(self, g * ov)
            _accumulate(other, g * self.value)

        out._backward = backward
        return out

    __rmul__ = __mul__

    def __matmul__(self, other):
        ov = value_of(other)
        parents = (self, other) if isinstance(other, Var) else (self,)
        out = Var(self.value @ ov, parents)

        def backward(g):
            _accumulate(self, g @ ov.T)
            _accumulate(other, self.value.T @ g)

        out._backward = backward
        return out

    def __rmatmul__(self, other):
        ov = np.asarray(other)
        out = Var(ov @ self.value, (self,))
        out._backward = lambda g: _accumulate(self, ov.T @ g)
        return out

    def __getitem__(self, key):
        out = Var(self.value[key], (self,))

        def backward(g):
            full = np.zeros_like(self.value)
            full[key] = g
            _accumulate(self, full)

        out._backward = backward
        return out

    def backward(self):
        """Seed with ones and propagate through the tape in reverse topo order."""
        order: list[Var] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if isinstance(parent, Var):
                    stack.append((parent, False))
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def value_of(x):
    return x.value if isinstance(x, Var) else x


def gelu(x):
    if not isinstance(x, Var):
        return numerics.gelu(x)
    v = x.value
    out = Var(numerics.gelu(v), (x,))

    def backward(g):
        c = math.sqrt(2.0 / math.pi)
        t = np.tanh(c * (v + 0.044715 * v**3))
        du = c * (1.0 + 3.0 * 0.044715 * v * v)
        _accumulate(x, g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du))

    out._backward = backward
    return out


def softmax_rows(x):
    if not isinstance(x, Var):
        return numerics.softmax_rows(x)
    y = numerics.softmax_rows(x.value)
    out = Var(y, (x,))

    def backward(g):
        _accumulate(x, y * (g - (g * y).sum(axis=-1, keepdims=True)))

    out._backward = backward
    return out


def layer_norm(x, gamma, beta, eps=1e-6):
    if not any(isinstance(t, Var) for t in (x, gamma, beta)):
        return numerics.layer_norm(x, gamma, beta, eps)
    xv, gv, bv = value_of(x), value_of(gamma), value_of(beta)
    mu = xv.mean(axis=-1, keepdims=True)
    centered = xv - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    parents = tuple(t for t in (x, gamma, beta) if isinstance(t, Var))
    out = Var(xhat * gv + bv, parents)

    def backward(g):
        _accumulate(gamma, (g * xhat).sum(axis=0))
        _accumulate(beta, g.sum(axis=0))
        if isinstance(x, Var):
            gi = g * gv
            m1 = gi.mean(axis=-1, keepdims=True)
            m2 = (gi * xhat).mean(axis=-1, keepdims=True)
            _accumulate(x, inv * (gi - m1 - xhat * m2))

    out._backward = backward
    return out


def vstack(parts):
    parts = list(parts)
    if not any(isinstance(p, Var) for p in parts):
        return np.vstack(parts)
    values = [value_of(p) for p in parts]
    parents = tuple(p for p in parts if isinstance(p, Var))
    out = Var(np.vstack(values), parents)

    def backward(g):
        offset = 0
        for part, value in zip(parts, values):
            rows = value.shape[0]
            _accumulate(part, g[offset : offset + rows])
            offset += rows

    out._backward = backward
    return out


def hstack(parts):
    parts = list(parts)
    if not any(isinstance(p, Var) for p in parts):
        return np.hstack(parts)
    values = [value_of(p) for p in parts]
    parents = tuple(p for p in parts if isinstance(p, Var))
    out = Var(np.hstack(values), parents)

    def backward(g):
        offset = 0
        for part, value in zip(parts, values):
            cols = value.shape[1]
            _accumulate(part, g[:, offset : offset + cols])
            offset += cols

    out._backward = backward
    return out


def total(x):
    """Sum of all entries; the scalar loss used by the gradient checks."""
    if not isinstance(x, Var):
        return float(np.sum(x))
    out = Var(np.asarray(x.value.sum()), (x,))
    out._backward = lambda g: _accumulate(x, g * np.ones_like(x.value))
    return out
