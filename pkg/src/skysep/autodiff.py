"""Minimal reverse-mode autodiff over numpy arrays.

Only the operations needed by the actor-critic network and its training
losses are implemented. Everything runs in float64; a Tensor records its
parents and a backward closure, and `backward()` replays the tape in
reverse topological order.
"""

from __future__ import annotations

import numpy as np

LEAKY_SLOPE = 0.01


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    # make numpy defer to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.ndim != 0:
                raise ValueError("implicit gradient only defined for scalars")
            grad = np.asarray(1.0)
        order, seen = [], set()

        def visit(t):
            if id(t) in seen or not t.requires_grad:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            order.append(t)

        visit(self)
        for t in order:
            t.grad = None
        self._accumulate(np.asarray(grad, dtype=np.float64))
        for t in reversed(order):
            if t._backward is not None:
                t._backward(t.grad)

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other)

        def bwd(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))

        return Tensor(self.data + other.data, parents=(self, other), backward=bwd)

    __radd__ = __add__

    def __neg__(self):
        def bwd(g):
            self._accumulate(-g)

        return Tensor(-self.data, parents=(self,), backward=bwd)

    def __sub__(self, other):
        return self + (-_as_tensor(other))

    def __rsub__(self, other):
        return _as_tensor(other) + (-self)

    def __mul__(self, other):
        other = _as_tensor(other)

        def bwd(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))

        return Tensor(self.data * other.data, parents=(self, other), backward=bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _as_tensor(other)

        def bwd(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.shape))
            if other.requires_grad:
                other._accumulate(
                    _unbroadcast(-g * self.data / other.data**2, other.shape)
                )

        return Tensor(self.data / other.data, parents=(self, other), backward=bwd)

    def __matmul__(self, other):
        other = _as_tensor(other)

        def bwd(g):
            if self.requires_grad:
                ga = g @ np.swapaxes(other.data, -1, -2)
                self._accumulate(_unbroadcast(ga, self.shape))
            if other.requires_grad:
                gb = np.swapaxes(self.data, -1, -2) @ g
                other._accumulate(_unbroadcast(gb, other.shape))

        return Tensor(self.data @ other.data, parents=(self, other), backward=bwd)

    def __getitem__(self, idx):
        def bwd(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            self._accumulate(full)

        return Tensor(self.data[idx], parents=(self,), backward=bwd)

    # -- shape ops --------------------------------------------------------

    def reshape(self, *shape):
        def bwd(g):
            self._accumulate(g.reshape(self.shape))

        return Tensor(self.data.reshape(*shape), parents=(self,), backward=bwd)

    def transpose(self, axes):
        inv = np.argsort(axes)

        def bwd(g):
            self._accumulate(g.transpose(inv))

        return Tensor(self.data.transpose(axes), parents=(self,), backward=bwd)

    # -- reductions -------------------------------------------------------

    def sum(self, axis=None):
        def bwd(g):
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.shape).copy())
            else:
                self._accumulate(
                    np.broadcast_to(np.expand_dims(g, axis), self.shape).copy()
                )

        return Tensor(self.data.sum(axis=axis), parents=(self,), backward=bwd)

    def mean(self, axis=None):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# -- elementwise nonlinearities -------------------------------------------


def leaky_relu(t: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    mask = t.data > 0

    def bwd(g):
        t._accumulate(g * np.where(mask, 1.0, slope))

    return Tensor(np.where(mask, t.data, slope * t.data), parents=(t,), backward=bwd)


def exp(t: Tensor) -> Tensor:
    out = np.exp(t.data)

    def bwd(g):
        t._accumulate(g * out)

    return Tensor(out, parents=(t,), backward=bwd)


def log(t: Tensor) -> Tensor:
    def bwd(g):
        t._accumulate(g / t.data)

    return Tensor(np.log(t.data), parents=(t,), backward=bwd)


def square(t: Tensor) -> Tensor:
    def bwd(g):
        t._accumulate(g * 2.0 * t.data)

    return Tensor(t.data**2, parents=(t,), backward=bwd)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; ties route their gradient to the first argument."""
    a, b = _as_tensor(a), _as_tensor(b)
    take_a = a.data <= b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(np.where(take_a, g, 0.0), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.where(take_a, 0.0, g), b.shape))

    return Tensor(np.minimum(a.data, b.data), parents=(a, b), backward=bwd)


def clip(t: Tensor, lo: float, hi: float) -> Tensor:
    inside = (t.data >= lo) & (t.data <= hi)

    def bwd(g):
        t._accumulate(np.where(inside, g, 0.0))

    return Tensor(np.clip(t.data, lo, hi), parents=(t,), backward=bwd)


def maximum_const(t: Tensor, lo: float) -> Tensor:
    """max(t, lo) with gradient blocked where the floor is active."""
    above = t.data > lo

    def bwd(g):
        t._accumulate(np.where(above, g, 0.0))

    return Tensor(np.maximum(t.data, lo), parents=(t,), backward=bwd)


def concat(tensors, axis=-1):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return Tensor(
        np.concatenate([t.data for t in tensors], axis=axis),
        parents=tuple(tensors),
        backward=bwd,
    )


def masked_softmax(scores: Tensor, valid: np.ndarray) -> Tensor:
    """Softmax over the last axis restricted to `valid` entries.

    Invalid entries get weight 0; rows with no valid entry get an all-zero
    row (callers treat the pooled context as zero there).
    """
    data = np.where(valid, scores.data, -np.inf)
    peak = np.max(data, axis=-1, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    e = np.where(valid, np.exp(data - peak), 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    out = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)

    def bwd(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        scores._accumulate(out * (g - inner))

    return Tensor(out, parents=(scores,), backward=bwd)


def gather_last(t: Tensor, idx: np.ndarray) -> Tensor:
    """Pick one entry per row along the last axis: out[i] = t[i, idx[i]]."""
    rows = np.arange(t.data.shape[0])

    def bwd(g):
        full = np.zeros_like(t.data)
        np.add.at(full, (rows, idx), g)
        t._accumulate(full)

    return Tensor(t.data[rows, idx], parents=(t,), backward=bwd)


def log_softmax(logits: Tensor) -> Tensor:
    peak = logits.data.max(axis=-1, keepdims=True)
    shifted = logits.data - peak
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def bwd(g):
        logits._accumulate(g - probs * g.sum(axis=-1, keepdims=True))

    return Tensor(out, parents=(logits,), backward=bwd)
