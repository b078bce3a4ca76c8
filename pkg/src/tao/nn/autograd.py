"""A small reverse-mode automatic differentiation engine over numpy arrays.

Each :class:`Tensor` records the tensors it was computed from and a closure
that maps its output gradient to input gradients.  ``backward`` walks the
graph in reverse topological order and frees it afterwards, so a second
call without a new forward pass raises :class:`NoGraph`.
"""

from __future__ import annotations

import numpy as np

from ..errors import NoGraph

DTYPE = np.float64


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    nd = g.ndim - len(shape)
    if nd > 0:
        g = g.sum(axis=tuple(range(nd)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name", "_retain")

    def __init__(self, data, requires_grad: bool = False, parents: tuple = (), backward=None,
                 name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.name = name
        self._retain = False

    # basics
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    def _make(self, data, parents, backward) -> "Tensor":
        rg = any(p.requires_grad for p in parents)
        return Tensor(data, rg, parents if rg else (), backward if rg else None)

    # elementwise arithmetic
    def __add__(self, other):
        other = self._lift(other)
        a, b = self, other

        def bw(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
        return self._make(a.data + b.data, (a, b), bw)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._lift(other)
        a, b = self, other

        def bw(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
        return self._make(a.data - b.data, (a, b), bw)

    def __rsub__(self, other):
        return self._lift(other) - self

    def __neg__(self):
        return self * -1.0

    def __mul__(self, other):
        other = self._lift(other)
        a, b = self, other

        def bw(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
        return self._make(a.data * b.data, (a, b), bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return self * other.pow(-1.0)
        return self * (1.0 / other)

    def pow(self, p: float) -> "Tensor":
        a = self

        def bw(g):
            return (g * p * a.data ** (p - 1),)
        return self._make(a.data ** p, (a,), bw)

    def square(self) -> "Tensor":
        a = self

        def bw(g):
            return (2.0 * g * a.data,)
        return self._make(a.data * a.data, (a,), bw)

    def exp(self) -> "Tensor":
        out = np.exp(self.data)

        def bw(g):
            return (g * out,)
        return self._make(out, (self,), bw)

    def log(self) -> "Tensor":
        a = self

        def bw(g):
            return (g / a.data,)
        return self._make(np.log(a.data), (a,), bw)

    def relu(self) -> "Tensor":
        mask = self.data > 0

        def bw(g):
            return (g * mask,)
        return self._make(self.data * mask, (self,), bw)

    def sigmoid(self) -> "Tensor":
        out = _sigmoid(self.data)

        def bw(g):
            return (g * out * (1.0 - out),)
        return self._make(out, (self,), bw)

    def softplus(self) -> "Tensor":
        x = self.data
        out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

        def bw(g):
            return (g * _sigmoid(x),)
        return self._make(out, (self,), bw)

    def softmax(self, axis: int = -1) -> "Tensor":
        z = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(z)
        out = e / e.sum(axis=axis, keepdims=True)

        def bw(g):
            return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
        return self._make(out, (self,), bw)

    def log_softmax(self, axis: int = -1) -> "Tensor":
        z = self.data - self.data.max(axis=axis, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
        out = z - lse
        sm = np.exp(out)

        def bw(g):
            return (g - sm * g.sum(axis=axis, keepdims=True),)
        return self._make(out, (self,), bw)

    # reductions and shape
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)
        return self._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), bw)

    def mean(self, axis=None) -> "Tensor":
        n = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    def reshape(self, *shape) -> "Tensor":
        old = self.shape

        def bw(g):
            return (g.reshape(old),)
        return self._make(self.data.reshape(*shape), (self,), bw)

    def transpose(self, *axes) -> "Tensor":
        axes = axes or tuple(reversed(range(self.ndim)))
        inv = np.argsort(axes)

        def bw(g):
            return (g.transpose(inv),)
        return self._make(self.data.transpose(axes), (self,), bw)

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def __getitem__(self, idx) -> "Tensor":
        shape = self.shape

        def bw(g):
            out = np.zeros(shape, DTYPE)
            np.add.at(out, idx, g)
            return (out,)
        return self._make(self.data[idx], (self,), bw)

    def take(self, index: np.ndarray) -> "Tensor":
        """Gather rows: ``out[...] = self[index[...]]`` along axis 0."""
        index = np.asarray(index)
        shape = self.shape

        def bw(g):
            flat = g.reshape(-1, *shape[1:])
            out = np.zeros(shape, DTYPE)
            np.add.at(out, index.ravel(), flat)
            return (out,)
        return self._make(self.data[index], (self,), bw)

    def __matmul__(self, other) -> "Tensor":
        other = self._lift(other)
        a, b = self, other
        if a.ndim != 2 or b.ndim != 2:
            raise ValueError("matmul expects 2-D operands; use einsum for batched products")

        def bw(g):
            return g @ b.data.T, a.data.T @ g
        return self._make(a.data @ b.data, (a, b), bw)

    # graph traversal
    def backward(self, grad=None) -> None:
        if self._backward is None:
            raise NoGraph("no recorded computation to differentiate")
        if grad is None:
            if self.data.size != 1:
                raise ValueError("grad must be given for non-scalar outputs")
            grad = np.ones_like(self.data)
        order = _topo(self)
        grads = {id(self): np.asarray(grad, DTYPE).reshape(self.shape)}
        for t in order:
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t._backward is None:
                if t.requires_grad:
                    t.grad = g.copy() if t.grad is None else t.grad + g
                continue
            if t._retain:
                t.grad = g.copy() if t.grad is None else t.grad + g
            for p, pg in zip(t._parents, t._backward(g)):
                if p.requires_grad:
                    prev = grads.get(id(p))
                    grads[id(p)] = pg if prev is None else prev + pg
            t._parents = ()
            t._backward = None

    def retain_grad(self) -> "Tensor":
        """Keep this non-leaf's gradient in ``.grad`` after backward."""
        self._retain = True
        return self


def _topo(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, done = stack.pop()
        if done:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for p in t._parents:
            if id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def einsum(spec: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand einsum; every index of an input must survive in the other input or the output."""
    a, b = Tensor._lift(a), Tensor._lift(b)
    ins, out = spec.replace(" ", "").split("->")
    sa, sb = ins.split(",")

    def bw(g):
        return (np.einsum(f"{out},{sb}->{sa}", g, b.data, optimize=True),
                np.einsum(f"{out},{sa}->{sb}", g, a.data, optimize=True))
    return a._make(np.einsum(spec, a.data, b.data, optimize=True), (a, b), bw)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    tensors = [Tensor._lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))
    return tensors[0]._make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=DTYPE), requires_grad=True, name=name)
