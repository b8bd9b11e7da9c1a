"""Minimal reverse-mode gradient engine over float64 numpy arrays.

Covers exactly the operations the policy networks need: dense algebra,
LeakyReLU/ELU/tanh/ReLU, exp/log, clipping, concatenation, row gathers and
segment sums (message passing), plus reductions. Tapes are built per forward
call and freed with it; no graph reuse, no higher-order derivatives.
"""

from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, _parents: Tuple["Tensor", ...] = (), _backward=None):
        self.data = _as_array(data)
        self.grad: Optional[np.ndarray] = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar loss")
        topo: list = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.data + other.data, (self, other))

        def back(g):
            self._accumulate(_unbroadcast(g, self.data.shape))
            other._accumulate(_unbroadcast(g, other.data.shape))

        out._backward = back
        return out

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.data * other.data, (self, other))

        def back(g):
            self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        out._backward = back
        return out

    def __neg__(self):
        out = Tensor(-self.data, (self,))
        out._backward = lambda g: self._accumulate(-g)
        return out

    def __sub__(self, other):
        return self + (-(other if isinstance(other, Tensor) else Tensor(other)))

    def __truediv__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.data / other.data, (self, other))

        def back(g):
            self._accumulate(_unbroadcast(g / other.data, self.data.shape))
            other._accumulate(
                _unbroadcast(-g * self.data / (other.data * other.data), other.data.shape)
            )

        out._backward = back
        return out

    __radd__ = __add__
    __rmul__ = __mul__

    def __rsub__(self, other):
        return Tensor(other) - self

    def __matmul__(self, other):
        out = Tensor(self.data @ other.data, (self, other))

        def back(g):
            self._accumulate(g @ other.data.T)
            other._accumulate(self.data.T @ g)

        out._backward = back
        return out

    # -- elementwise --------------------------------------------------------

    def exp(self):
        val = np.exp(self.data)
        out = Tensor(val, (self,))
        out._backward = lambda g: self._accumulate(g * val)
        return out

    def log(self):
        out = Tensor(np.log(self.data), (self,))
        out._backward = lambda g: self._accumulate(g / self.data)
        return out

    def tanh(self):
        val = np.tanh(self.data)
        out = Tensor(val, (self,))
        out._backward = lambda g: self._accumulate(g * (1.0 - val * val))
        return out

    def relu(self):
        out = Tensor(np.maximum(self.data, 0.0), (self,))
        out._backward = lambda g: self._accumulate(g * (self.data > 0.0))
        return out

    def leaky_relu(self, slope: float = 0.2):
        pos = self.data > 0.0
        out = Tensor(np.where(pos, self.data, slope * self.data), (self,))
        out._backward = lambda g: self._accumulate(g * np.where(pos, 1.0, slope))
        return out

    def elu(self, alpha: float = 1.0):
        pos = self.data > 0.0
        expm = alpha * (np.exp(np.minimum(self.data, 0.0)) - 1.0)
        out = Tensor(np.where(pos, self.data, expm), (self,))
        out._backward = lambda g: self._accumulate(g * np.where(pos, 1.0, expm + alpha))
        return out

    def clip(self, lo: float, hi: float):
        """Gradient is identity inside [lo, hi], zero beyond (PPO clipping)."""
        inside = (self.data >= lo) & (self.data <= hi)
        out = Tensor(np.clip(self.data, lo, hi), (self,))
        out._backward = lambda g: self._accumulate(g * inside)
        return out

    def square(self):
        return self * self

    # -- reductions / shaping -----------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,))

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.data.shape).copy())

        out._backward = back
        return out

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), (self,))
        out._backward = lambda g: self._accumulate(g.reshape(self.data.shape))
        return out


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; gradient follows the winning operand (ties -> first)."""
    take_a = a.data >= b.data
    out = Tensor(np.where(take_a, a.data, b.data), (a, b))

    def back(g):
        a._accumulate(_unbroadcast(g * take_a, a.data.shape))
        b._accumulate(_unbroadcast(g * ~take_a, b.data.shape))

    out._backward = back
    return out


def minimum(a: Tensor, b: Tensor) -> Tensor:
    take_a = a.data <= b.data
    out = Tensor(np.where(take_a, a.data, b.data), (a, b))

    def back(g):
        a._accumulate(_unbroadcast(g * take_a, a.data.shape))
        b._accumulate(_unbroadcast(g * ~take_a, b.data.shape))

    out._backward = back
    return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accumulate(piece)

    out._backward = back
    return out


def gather_rows(x: Tensor, idx) -> Tensor:
    """Rows x[idx]; repeated indices accumulate on the way back."""
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(x.data[idx], (x,))

    def back(g):
        acc = np.zeros_like(x.data)
        np.add.at(acc, idx, g)
        x._accumulate(acc)

    out._backward = back
    return out


def segment_sum(x: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Sum rows of x into num_segments buckets; empty buckets stay zero."""
    seg = np.asarray(segment_ids, dtype=np.int64)
    val = np.zeros((num_segments,) + x.data.shape[1:], dtype=np.float64)
    np.add.at(val, seg, x.data)
    out = Tensor(val, (x,))
    out._backward = lambda g: x._accumulate(g[seg])
    return out


def segment_softmax(scores: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Softmax of scores within each segment (rows grouped by segment_ids).

    The per-segment max is treated as a constant shift, which leaves the
    exact softmax gradient untouched.
    """
    seg = np.asarray(segment_ids, dtype=np.int64)
    shift = np.full((num_segments,) + scores.data.shape[1:], -np.inf)
    np.maximum.at(shift, seg, scores.data)
    e = (scores - Tensor(shift[seg])).exp()
    denom = segment_sum(e, seg, num_segments)
    return e / gather_rows(denom, seg)


def log_softmax(z: Tensor, axis: int = -1) -> Tensor:
    shift = Tensor(z.data.max(axis=axis, keepdims=True))
    zs = z - shift
    lse = zs.exp().sum(axis=axis, keepdims=True).log()
    return zs - lse
