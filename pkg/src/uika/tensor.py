"""Minimal reverse-mode autodiff over float64 numpy arrays.

The op set is exactly what the gated convolutional classifier needs:
embedding gather, windowed slices, concat, matmul against a weight,
pointwise nonlinearities, masked max over time, dropout, log-softmax and
reductions.  Graphs are built eagerly; ``backward`` walks the tape in
reverse topological order.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


class Tensor:
    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._backward = lambda: None
        self._parents: tuple[Tensor, ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self) -> None:
        """Seed d(self)/d(self) = 1 and propagate through the tape."""
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            node._backward()

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other: "Tensor") -> "Tensor":
        other = _as_tensor(other)
        out = _make(self.data + other.data, (self, other))

        def backward():
            if self.requires_grad:
                self._accumulate(_unbroadcast(out.grad, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(out.grad, other.data.shape))

        out._backward = backward
        return out

    def __mul__(self, other: "Tensor") -> "Tensor":
        other = _as_tensor(other)
        out = _make(self.data * other.data, (self, other))

        def backward():
            if self.requires_grad:
                self._accumulate(_unbroadcast(out.grad * other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(out.grad * self.data, other.data.shape))

        out._backward = backward
        return out

    def __neg__(self) -> "Tensor":
        return self * Tensor(-1.0)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return self + (-_as_tensor(other))

    def tanh(self) -> "Tensor":
        out = _make(np.tanh(self.data), (self,))

        def backward():
            if self.requires_grad:
                self._accumulate((1.0 - out.data * out.data) * out.grad)

        out._backward = backward
        return out

    def relu(self) -> "Tensor":
        out = _make(np.maximum(self.data, 0.0), (self,))

        def backward():
            if self.requires_grad:
                self._accumulate((self.data > 0.0) * out.grad)

        out._backward = backward
        return out

    def exp(self) -> "Tensor":
        out = _make(np.exp(self.data), (self,))

        def backward():
            if self.requires_grad:
                self._accumulate(out.data * out.grad)

        out._backward = backward
        return out

    def sum(self) -> "Tensor":
        out = _make(np.sum(self.data), (self,))

        def backward():
            if self.requires_grad:
                self._accumulate(np.full_like(self.data, float(out.grad)))

        out._backward = backward
        return out


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data: np.ndarray, parents: tuple[Tensor, ...]) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    out._parents = tuple(p for p in parents if p.requires_grad)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] > 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def gather_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Embedding lookup: table (V, d) indexed by ids (B, L) -> (B, L, d)."""
    out = _make(table.data[ids], (table,))

    def backward():
        if table.requires_grad:
            grad = np.zeros_like(table.data)
            np.add.at(grad, ids, out.grad)
            table._accumulate(grad)

    out._backward = backward
    return out


def slice_time(x: Tensor, start: int, end: int) -> Tensor:
    """x[:, start:end, :] along the time axis."""
    out = _make(x.data[:, start:end, :], (x,))

    def backward():
        if x.requires_grad:
            grad = np.zeros_like(x.data)
            grad[:, start:end, :] = out.grad
            x._accumulate(grad)

    out._backward = backward
    return out


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    out = _make(np.concatenate([p.data for p in parts], axis=axis), tuple(parts))
    sizes = [p.data.shape[axis] for p in parts]

    def backward():
        offset = 0
        for part, size in zip(parts, sizes):
            if part.requires_grad:
                idx = [slice(None)] * out.grad.ndim
                idx[axis] = slice(offset, offset + size)
                part._accumulate(out.grad[tuple(idx)])
            offset += size

    out._backward = backward
    return out


def matmul(x: Tensor, w: Tensor) -> Tensor:
    """x (..., P, F_in) @ w (F_in, F_out)."""
    out = _make(np.matmul(x.data, w.data), (x, w))

    def backward():
        if x.requires_grad:
            x._accumulate(np.matmul(out.grad, w.data.T))
        if w.requires_grad:
            w._accumulate(np.tensordot(x.data, out.grad, axes=(tuple(range(x.data.ndim - 1)),) * 2))

    out._backward = backward
    return out


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map with (out_features, in_features) weight: x @ w.T + b."""
    out = _make(np.matmul(x.data, w.data.T) + b.data, (x, w, b))

    def backward():
        if x.requires_grad:
            x._accumulate(np.matmul(out.grad, w.data))
        if w.requires_grad:
            w._accumulate(np.matmul(out.grad.T, x.data))
        if b.requires_grad:
            b._accumulate(out.grad.sum(axis=0))

    out._backward = backward
    return out


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = _make(x.data.reshape(shape), (x,))

    def backward():
        if x.requires_grad:
            x._accumulate(out.grad.reshape(x.data.shape))

    out._backward = backward
    return out


def span_mean(x: Tensor, weights: np.ndarray) -> Tensor:
    """Weighted sum over time: x (B, L, d) with weights (B, L) -> (B, d)."""
    out = _make(np.einsum("bl,bld->bd", weights, x.data), (x,))

    def backward():
        if x.requires_grad:
            x._accumulate(weights[:, :, None] * out.grad[:, None, :])

    out._backward = backward
    return out


def masked_max_time(x: Tensor, mask: np.ndarray) -> Tensor:
    """Max over the time axis of x (B, P, F), restricted to mask (B, P).

    Every row must have at least one valid position.  Gradient flows to
    the first argmax position (numpy argmax tie rule), which keeps
    backward deterministic.
    """
    if not mask.any(axis=1).all():
        raise ValueError("masked_max_time: some row has no valid position")
    shielded = np.where(mask[:, :, None], x.data, -np.inf)
    idx = np.argmax(shielded, axis=1)  # (B, F)
    out = _make(np.take_along_axis(shielded, idx[:, None, :], axis=1)[:, 0, :], (x,))

    def backward():
        if x.requires_grad:
            grad = np.zeros_like(x.data)
            np.put_along_axis(grad, idx[:, None, :], out.grad[:, None, :], axis=1)
            x._accumulate(grad)

    out._backward = backward
    return out


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: scaled by 1/(1 - rate) at train time."""
    if rate == 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    out = _make(x.data * keep, (x,))

    def backward():
        if x.requires_grad:
            x._accumulate(out.grad * keep)

    out._backward = backward
    return out


def log_softmax(x: Tensor) -> Tensor:
    """Row-wise log-softmax of x (B, C)."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = _make(shifted - log_z, (x,))

    def backward():
        if x.requires_grad:
            probs = np.exp(out.data)
            x._accumulate(out.grad - probs * out.grad.sum(axis=-1, keepdims=True))

    out._backward = backward
    return out
