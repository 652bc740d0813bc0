"""Minimal reverse-mode tape over numpy arrays.

Only the handful of primitives the GNN and watermark losses need are
provided.  Each :class:`Tensor` records its parents and a closure that
pushes its gradient back to them; :meth:`Tensor.backward` replays the tape
in reverse topological order.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class Tensor:
    __slots__ = ("value", "grad", "parents", "_backward", "requires_grad")

    def __init__(
        self,
        value,
        parents: Sequence["Tensor"] = (),
        backward: Callable[[np.ndarray], None] | None = None,
        requires_grad: bool = False,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents = tuple(parents)
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)

    @property
    def shape(self):
        return self.value.shape

    def _accum(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        if self.value.size != 1:
            raise ValueError("backward() needs a scalar output")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"


def param(value) -> Tensor:
    return Tensor(value, requires_grad=True)


def const(value) -> Tensor:
    return Tensor(value)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value + b.value, (a, b))

    def back(g):
        a._accum(_unbroadcast(g, a.value.shape))
        b._accum(_unbroadcast(g, b.value.shape))

    out._backward = back
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.value * c, (a,))
    out._backward = lambda g: a._accum(g * c)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value @ b.value, (a, b))

    def back(g):
        if a.requires_grad:
            a._accum(g @ b.value.T)
        if b.requires_grad:
            b._accum(a.value.T @ g)

    out._backward = back
    return out


def matmul_t(a: Tensor, w: Tensor) -> Tensor:
    """``a @ w.T`` for weights stored output-major (rows = output units)."""
    out = Tensor(a.value @ w.value.T, (a, w))

    def back(g):
        if a.requires_grad:
            a._accum(g @ w.value)
        if w.requires_grad:
            w._accum(g.T @ a.value)

    out._backward = back
    return out


def spmm(S, a: Tensor) -> Tensor:
    """Constant (sparse or dense) operator applied on the left."""
    out = Tensor(S @ a.value, (a,))
    St = S.T.tocsr() if sp.issparse(S) else S.T
    out._backward = lambda g: a._accum(np.asarray(St @ g))
    return out


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0
    out = Tensor(np.where(mask, a.value, 0.0), (a,))
    out._backward = lambda g: a._accum(g * mask)
    return out


def identity(a: Tensor) -> Tensor:
    return a


def softmax(a: Tensor) -> Tensor:
    z = a.value - a.value.max(axis=1, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=1, keepdims=True)
    out = Tensor(p, (a,))

    def back(g):
        a._accum(p * (g - (g * p).sum(axis=1, keepdims=True)))

    out._backward = back
    return out


def nll_from_logits(logits: Tensor, rows: np.ndarray, labels: np.ndarray) -> Tensor:
    """``-sum_k log softmax(logits)[rows[k], labels[k]]``."""
    z = logits.value[rows]
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    k = np.arange(len(rows))
    loss = float(np.sum(lse - z[k, labels]))
    out = Tensor(loss, (logits,))

    def back(g):
        p = np.exp(z - lse[:, None])
        p[k, labels] -= 1.0
        full = np.zeros_like(logits.value)
        np.add.at(full, rows, p * float(g))
        logits._accum(full)

    out._backward = back
    return out


def take_rows(a: Tensor, rows: np.ndarray) -> Tensor:
    out = Tensor(a.value[rows], (a,))

    def back(g):
        full = np.zeros_like(a.value)
        np.add.at(full, rows, g)
        a._accum(full)

    out._backward = back
    return out


def total(terms: Iterable[Tensor]) -> Tensor:
    terms = list(terms)
    out = Tensor(sum(float(t.value) for t in terms), terms)

    def back(g):
        for t in terms:
            t._accum(g)

    out._backward = back
    return out
