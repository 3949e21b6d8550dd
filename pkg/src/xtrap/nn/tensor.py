"""Minimal reverse-mode autodiff over float64 numpy arrays.

Only the operations the models need: arithmetic with broadcasting,
matmul, a few pointwise nonlinearities, reductions, row gather/scatter
for message passing, segment mean for pooling, and fused stable losses.
Call .backward() on a scalar to accumulate gradients into leaf tensors.
"""
from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch, UnrecordedForward


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce `grad` back to `shape` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def leaf(array: np.ndarray, grad_buffer: np.ndarray) -> "Tensor":
        """Parameter leaf whose gradient accumulates into a persistent buffer."""
        t = Tensor(array, requires_grad=True)
        t.grad = grad_buffer
        return t

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # -- autodiff core --------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ShapeMismatch("backward() needs a scalar loss")
        if not self.requires_grad:
            raise UnrecordedForward(
                "backward() on a value with no recorded computation"
            )
        topo, seen = [], set()

        def visit(t):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            topo.append(t)

        visit(self)
        self._seed_grad(np.ones_like(self.data))
        for t in reversed(topo):
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)

    def _seed_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def _accum(self, g):
        self._seed_grad(g)

    # -- arithmetic -----------------------------------------------------------

    def _binary(self, other, fwd, bwd_self, bwd_other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        req = self.requires_grad or other.requires_grad
        out = Tensor(fwd(self.data, other.data), req, (self, other))

        def backward(g):
            if self.requires_grad:
                self._accum(_unbroadcast(bwd_self(g), self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(bwd_other(g), other.data.shape))

        out._backward = backward if req else None
        return out, other

    def __add__(self, other):
        out, _ = self._binary(other, np.add, lambda g: g, lambda g: g)
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, self.requires_grad, (self,))
        if self.requires_grad:
            out._backward = lambda g: self._accum(-g)
        return out

    def __sub__(self, other):
        out, _ = self._binary(other, np.subtract, lambda g: g, lambda g: -g)
        return out

    def __rsub__(self, other):
        return Tensor(other) - self

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out, o = self._binary(
            other, np.multiply, lambda g: g * o.data, lambda g: g * self.data
        )
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out, o = self._binary(
            other,
            np.divide,
            lambda g: g / o.data,
            lambda g: -g * self.data / (o.data * o.data),
        )
        return out

    def __matmul__(self, other):
        if not isinstance(other, Tensor):
            other = Tensor(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ShapeMismatch("matmul expects 2-D operands")
        req = self.requires_grad or other.requires_grad
        out = Tensor(self.data @ other.data, req, (self, other))

        def backward(g):
            if self.requires_grad:
                self._accum(g @ other.data.T)
            if other.requires_grad:
                other._accum(self.data.T @ g)

        out._backward = backward if req else None
        return out

    @property
    def T(self):
        out = Tensor(self.data.T, self.requires_grad, (self,))
        if self.requires_grad:
            out._backward = lambda g: self._accum(g.T)
        return out

    def reshape(self, *shape):
        old = self.data.shape
        out = Tensor(self.data.reshape(*shape), self.requires_grad, (self,))
        if self.requires_grad:
            out._backward = lambda g: self._accum(g.reshape(old))
        return out

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None):
        out = Tensor(self.data.sum(axis=axis), self.requires_grad, (self,))
        if self.requires_grad:
            def backward(g):
                if axis is None:
                    self._accum(np.full_like(self.data, float(g)))
                else:
                    self._accum(np.broadcast_to(
                        np.expand_dims(g, axis), self.data.shape).copy())
            out._backward = backward
        return out

    def mean(self, axis=None):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    def item(self) -> float:
        return float(self.data)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0), x.requires_grad, (x,))
    if x.requires_grad:
        out._backward = lambda g: x._accum(g * (x.data > 0))
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = np.empty_like(x.data)
    pos = x.data >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    e = np.exp(x.data[~pos])
    s[~pos] = e / (1.0 + e)
    out = Tensor(s, x.requires_grad, (x,))
    if x.requires_grad:
        out._backward = lambda g: x._accum(g * s * (1.0 - s))
    return out


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)
    out = Tensor(e, x.requires_grad, (x,))
    if x.requires_grad:
        out._backward = lambda g: x._accum(g * e)
    return out


def log(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.data), x.requires_grad, (x,))
    if x.requires_grad:
        out._backward = lambda g: x._accum(g / x.data)
    return out


def sqrt(x: Tensor) -> Tensor:
    r = np.sqrt(x.data)
    out = Tensor(r, x.requires_grad, (x,))
    if x.requires_grad:
        out._backward = lambda g: x._accum(g * 0.5 / r)
    return out


def amax(x: Tensor, axis: int) -> Tensor:
    """Max over one axis; gradient flows to the first argmax."""
    idx = np.argmax(x.data, axis=axis)
    out = Tensor(np.max(x.data, axis=axis), x.requires_grad, (x,))
    if x.requires_grad:
        def backward(g):
            gx = np.zeros_like(x.data)
            if axis == 0:
                gx[idx, np.arange(x.data.shape[1])] = g
            else:
                gx[np.arange(x.data.shape[0]), idx] = g
            x._accum(gx)
        out._backward = backward
    return out


def gather(x: Tensor, idx: np.ndarray) -> Tensor:
    """Rows of x selected by idx (any multiplicity)."""
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(x.data[idx], x.requires_grad, (x,))
    if x.requires_grad:
        def backward(g):
            gx = np.zeros_like(x.data)
            np.add.at(gx, idx, g)
            x._accum(gx)
        out._backward = backward
    return out


def index_sum(x: Tensor, idx: np.ndarray, num: int) -> Tensor:
    """out[i] = sum of rows of x whose idx equals i (scatter-add)."""
    idx = np.asarray(idx, dtype=np.int64)
    shape = (num,) + x.data.shape[1:]
    fwd = np.zeros(shape)
    np.add.at(fwd, idx, x.data)
    out = Tensor(fwd, x.requires_grad, (x,))
    if x.requires_grad:
        out._backward = lambda g: x._accum(g[idx])
    return out


def segment_mean(x: Tensor, seg: np.ndarray, num: int) -> Tensor:
    """Mean of x's rows per segment id; empty segments yield zero rows."""
    seg = np.asarray(seg, dtype=np.int64)
    counts = np.bincount(seg, minlength=num).astype(np.float64)
    safe = np.maximum(counts, 1.0)
    sums = index_sum(x, seg, num)
    return sums * (1.0 / safe)[:, None]


def concat(tensors, axis=0):
    tensors = list(tensors)
    req = any(t.requires_grad for t in tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), req, tuple(tensors))
    if req:
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)
        def backward(g):
            for t, a, b in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    t._accum(np.take(g, np.arange(a, b), axis=axis))
        out._backward = backward
    return out


def softmax(x: np.ndarray, axis=-1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Per-row soft-target cross-entropy: -sum(t * log softmax(z)). Shape [N]."""
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != logits.data.shape:
        raise ShapeMismatch(
            f"targets {t.shape} do not match logits {logits.data.shape}"
        )
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1, keepdims=True))
    losses = (t * (logz - z)).sum(axis=1)
    out = Tensor(losses, logits.requires_grad, (logits,))
    if logits.requires_grad:
        sm = np.exp(z - logz)
        out._backward = lambda g: logits._accum(g[:, None] * (sm - t))
    return out


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Per-element binary cross-entropy on logits, numerically stable."""
    t = np.asarray(targets, dtype=np.float64)
    x = logits.data
    losses = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))
    out = Tensor(losses, logits.requires_grad, (logits,))
    if logits.requires_grad:
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        e = np.exp(x[~pos])
        s[~pos] = e / (1.0 + e)
        out._backward = lambda g: logits._accum(g * (s - t))
    return out


def stack_scalars(scalars) -> Tensor:
    """1-D tensor from scalar tensors (keeps gradients)."""
    return concat([s.reshape(1) for s in scalars], axis=0)
