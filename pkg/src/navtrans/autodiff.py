"""Reverse-mode automatic differentiation over float64 numpy arrays.

A Tensor wraps a value plus a closure that routes the output gradient to its
parents. Calling backward() on a scalar walks the tape in reverse topological
order. Matrices are plain 2-D arrays (row-major float64), vectors are 1-D.
"""

from __future__ import annotations

import numpy as np

from .errors import AllMasked, InvalidRate, ShapeMismatch
from .graph import MASK_NEG


class Tensor:
    __slots__ = ("value", "grad", "parents", "bwd")

    def __init__(self, value, parents=(), bwd=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.bwd = bwd

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def backward(self):
        if self.value.shape != ():
            raise ShapeMismatch("backward() requires a scalar loss")
        order = _topological(self)
        self.grad = np.asarray(1.0)
        for t in reversed(order):
            if t.bwd is not None and t.grad is not None:
                t.bwd(t.grad)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _topological(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


class Param:
    """A named trainable array with a persistent gradient accumulator."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name, value):
        self.name = name
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def tensor(self) -> Tensor:
        param = self

        def bwd(g):
            param.grad += g

        return Tensor(param.value, (), bwd)


def constant(value) -> Tensor:
    return Tensor(value)


def _check_same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    out = Tensor(a.value + b.value, (a, b))

    def bwd(g):
        a.accum(g)
        b.accum(g)

    out.bwd = bwd
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    out = Tensor(a.value - b.value, (a, b))

    def bwd(g):
        a.accum(g)
        b.accum(-g)

    out.bwd = bwd
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    out = Tensor(a.value * b.value, (a, b))

    def bwd(g):
        a.accum(g * b.value)
        b.accum(g * a.value)

    out.bwd = bwd
    return out


def affine(a: Tensor, alpha: float, beta: float) -> Tensor:
    """alpha * a + beta with python-float coefficients (e.g. 1 - z)."""
    out = Tensor(alpha * a.value + beta, (a,))

    def bwd(g):
        a.accum(alpha * g)

    out.bwd = bwd
    return out


def scale(a: Tensor, s: float) -> Tensor:
    return affine(a, s, 0.0)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    va, vb = a.value, b.value
    if va.ndim == 0 or vb.ndim == 0:
        raise ShapeMismatch("matmul does not take scalars")
    if va.shape[-1] != vb.shape[0]:
        raise ShapeMismatch(f"matmul: inner dims {va.shape} @ {vb.shape}")
    out = Tensor(va @ vb, (a, b))

    def bwd(g):
        if va.ndim == 2 and vb.ndim == 2:
            a.accum(g @ vb.T)
            b.accum(va.T @ g)
        elif va.ndim == 2 and vb.ndim == 1:
            a.accum(np.outer(g, vb))
            b.accum(va.T @ g)
        elif va.ndim == 1 and vb.ndim == 2:
            a.accum(vb @ g)
            b.accum(np.outer(va, g))
        else:  # both 1-D: dot product
            a.accum(g * vb)
            b.accum(g * va)

    out.bwd = bwd
    return out


def add_rowvec(m: Tensor, v: Tensor) -> Tensor:
    """(L, H) matrix plus an (H,) vector broadcast over rows."""
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeMismatch(f"add_rowvec: {m.shape} + {v.shape}")
    out = Tensor(m.value + v.value, (m, v))

    def bwd(g):
        m.accum(g)
        v.accum(g.sum(axis=0))

    out.bwd = bwd
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.value)
    out = Tensor(y, (a,))

    def bwd(g):
        a.accum(g * (1.0 - y * y))

    out.bwd = bwd
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.value))
    out = Tensor(y, (a,))

    def bwd(g):
        a.accum(g * y * (1.0 - y))

    out.bwd = bwd
    return out


def concat(parts) -> Tensor:
    """Concatenate 1-D tensors into one vector."""
    parts = list(parts)
    out = Tensor(np.concatenate([p.value for p in parts]), tuple(parts))
    sizes = [p.value.shape[0] for p in parts]

    def bwd(g):
        offset = 0
        for p, n in zip(parts, sizes):
            p.accum(g[offset : offset + n])
            offset += n

    out.bwd = bwd
    return out


def hstack(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two matrices column-wise: (L, p) ++ (L, q) -> (L, p+q)."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeMismatch(f"hstack: {a.shape} vs {b.shape}")
    out = Tensor(np.hstack([a.value, b.value]), (a, b))
    p = a.shape[1]

    def bwd(g):
        a.accum(g[:, :p])
        b.accum(g[:, p:])

    out.bwd = bwd
    return out


def stack_rows(rows) -> Tensor:
    """Stack 1-D tensors of equal length into a (T, k) matrix."""
    rows = list(rows)
    out = Tensor(np.stack([r.value for r in rows]), tuple(rows))

    def bwd(g):
        for i, r in enumerate(rows):
            r.accum(g[i])

    out.bwd = bwd
    return out


def row(m: Tensor, i: int) -> Tensor:
    out = Tensor(m.value[i], (m,))

    def bwd(g):
        if m.grad is None:
            m.grad = np.zeros_like(m.value)
        m.grad[i] += g

    out.bwd = bwd
    return out


def transpose(m: Tensor) -> Tensor:
    out = Tensor(m.value.T, (m,))

    def bwd(g):
        m.accum(g.T)

    out.bwd = bwd
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.value.sum(), (a,))

    def bwd(g):
        a.accum(np.full_like(a.value, float(g)))

    out.bwd = bwd
    return out


def add_many(terms) -> Tensor:
    """Sum a list of same-shape tensors (e.g. per-step losses)."""
    terms = list(terms)
    if not terms:
        raise ShapeMismatch("add_many needs at least one term")
    out = Tensor(sum(t.value for t in terms), tuple(terms))

    def bwd(g):
        for t in terms:
            t.accum(g)

    out.bwd = bwd
    return out


def gather_rows(m: Tensor, indices) -> Tensor:
    """Select rows of an embedding matrix; gradients scatter-add back."""
    idx = np.asarray(indices, dtype=np.int64)
    out = Tensor(m.value[idx], (m,))

    def bwd(g):
        if m.grad is None:
            m.grad = np.zeros_like(m.value)
        np.add.at(m.grad, idx, g)

    out.bwd = bwd
    return out


def softmax(x: Tensor, mask=None) -> Tensor:
    """Row-wise (2-D) or plain (1-D) softmax with an optional additive mask.

    The mask is a constant array of 0 / MASK_NEG entries applied before the
    max-subtraction stabilization, so masked entries come out exactly 0.
    """
    z = x.value if mask is None else x.value + mask
    if np.any(z.max(axis=-1) <= MASK_NEG / 2.0):
        raise AllMasked("softmax input has every entry masked")
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y, (x,))

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        x.accum(y * (g - dot))

    out.bwd = bwd
    return out


def cross_entropy(logits: Tensor, target_index: int) -> Tensor:
    """-log softmax(logits)[target] as a scalar tensor."""
    z = logits.value
    if z.ndim != 1:
        raise ShapeMismatch("cross_entropy expects a 1-D logit vector")
    if not 0 <= target_index < z.shape[0]:
        raise IndexError(f"target index {target_index} outside alphabet of {z.shape[0]}")
    m = z.max()
    e = np.exp(z - m)
    p = e / e.sum()
    loss = np.log(e.sum()) + m - z[target_index]
    out = Tensor(loss, (logits,))

    def bwd(g):
        gv = p.copy()
        gv[target_index] -= 1.0
        logits.accum(float(g) * gv)

    out.bwd = bwd
    return out


def dropout(x: Tensor, rate: float, train: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: scales surviving entries by 1/(1-rate) during training."""
    if not 0.0 <= rate < 1.0:
        raise InvalidRate(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    out = Tensor(x.value * keep, (x,))

    def bwd(g):
        x.accum(g * keep)

    out.bwd = bwd
    return out
