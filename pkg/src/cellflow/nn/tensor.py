"""Reverse-mode autodiff over float64 numpy arrays.

A :class:`Tensor` wraps an ndarray and remembers how it was produced; calling
``backward()`` on a scalar walks the graph once in reverse topological order.
Forward evaluation is pure: identical inputs give bit-identical outputs.
Hot paths (dense, silu, softmax, clipping) dispatch to the selected kernel
backend; everything else is plain numpy inside closures.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .. import _kernels as K
from ..errors import ValidationError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (pure inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _asarray(data) -> np.ndarray:
    a = np.asarray(data, dtype=np.float64)
    return a


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every reachable tensor."""
        if self.data.size != 1:
            raise ValidationError("backward() requires a scalar loss")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward_fn is None or node.grad is None:
                continue
            grads = node._backward_fn(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    # operator sugar; full definitions below
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"


def _toposort(root: Tensor) -> list[Tensor]:
    # iterative DFS; generated graphs nest too deep for recursion
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to the parent's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _node(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _node(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _node(data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data / b.data

    def backward(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return _node(data, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        return (-g,)

    return _node(-a.data, (a,), backward)


def square(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        return (g * 2.0 * a.data,)

    return _node(a.data * a.data, (a,), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)

    def backward(g):
        return (g * data,)

    return _node(data, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        return (g / a.data,)

    return _node(np.log(a.data), (a,), backward)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    data = np.sqrt(a.data)

    def backward(g):
        return (g / (2.0 * data),)

    return _node(data, (a,), backward)


def maximum0(a) -> Tensor:
    """Elementwise max(x, 0); subgradient 0 at the kink."""
    a = as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def backward(g):
        return (g * (a.data > 0.0),)

    return _node(data, (a,), backward)


def clip_sym(a, bound: float) -> Tensor:
    """Clamp to [-bound, bound]; gradient passes only strictly inside."""
    a = as_tensor(a)
    flat = np.ascontiguousarray(a.data.reshape(-1))
    data = K.clip_sym(flat, float(bound)).reshape(a.data.shape)

    def backward(g):
        gf = K.clip_sym_backward(flat, float(bound), np.ascontiguousarray(g.reshape(-1)))
        return (gf.reshape(a.data.shape),)

    return _node(data, (a,), backward)


def silu(a) -> Tensor:
    """x * sigmoid(x)."""
    a = as_tensor(a)
    flat = np.ascontiguousarray(a.data.reshape(-1))
    data = K.silu(flat).reshape(a.data.shape)

    def backward(g):
        gf = K.silu_backward(flat, np.ascontiguousarray(g.reshape(-1)))
        return (gf.reshape(a.data.shape),)

    return _node(data, (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValidationError("matmul expects 2-D operands")
    data = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _node(data, (a, b), backward)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ValidationError("transpose expects a 2-D tensor")

    def backward(g):
        return (g.T,)

    return _node(a.data.T.copy(), (a,), backward)


def dense(x, w, b) -> Tensor:
    """y = x @ w.T + b with w (m, n), b (m,); x may be (n,) or (B, n)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
        raise ValidationError("dense expects w (m, n) and b (m,)")
    squeeze = x.ndim == 1
    x2 = x.data.reshape(1, -1) if squeeze else x.data
    if x2.ndim != 2 or x2.shape[1] != w.shape[1]:
        raise ValidationError(
            f"dense shape mismatch: x {x.shape} vs w {tuple(w.shape)}"
        )
    x2 = np.ascontiguousarray(x2)
    y = K.dense_forward(x2, w.data, b.data)
    data = y[0] if squeeze else y

    def backward(g):
        g2 = g.reshape(1, -1) if squeeze else g
        gx, gw, gb = K.dense_backward(x2, w.data, np.ascontiguousarray(g2))
        return gx[0] if squeeze else gx, gw, gb

    return _node(data, (x, w, b), backward)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if axis >= a.ndim or axis < -a.ndim:
        raise ValidationError(f"softmax axis {axis} out of range for shape {a.shape}")
    if a.ndim == 2 and axis in (-1, 1):
        y = K.softmax_last(np.ascontiguousarray(a.data))

        def backward2(g):
            return (K.softmax_backward_last(y, np.ascontiguousarray(g)),)

        return _node(y, (a,), backward2)
    # general axis: numpy path
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _node(y, (a,), backward)


# ---------------------------------------------------------------------------
# reductions and shape ops

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _node(data, (a,), backward)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        n = a.data.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        return (g.reshape(a.data.shape),)

    return _node(a.data.reshape(shape), (a,), backward)


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ValidationError("concat of an empty sequence")
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(data, tuple(ts), backward)


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ValidationError("stack of an empty sequence")
    data = np.stack([t.data for t in ts], axis=axis)

    def backward(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(moved[i] for i in range(len(ts)))

    return _node(data, tuple(ts), backward)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    data = a.data[idx]

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _node(np.array(data, copy=True), (a,), backward)


def take_per_row(a, idx) -> Tensor:
    """Pick one column per row: a (B, n), idx (B,) -> (B,)."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    rows = np.arange(a.data.shape[0])
    data = a.data[rows, idx]

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, (rows, idx), g)
        return (out,)

    return _node(data, (a,), backward)


def tile_last(a, reps: int) -> Tensor:
    """Repeat the last axis `reps` times (periodic extension)."""
    a = as_tensor(a)
    data = np.tile(a.data, (1,) * (a.ndim - 1) + (reps,)) if a.ndim > 1 else np.tile(a.data, reps)
    n = a.data.shape[-1]

    def backward(g):
        return (g.reshape(g.shape[:-1] + (reps, n)).sum(axis=-2),)

    return _node(data, (a,), backward)


def l2_normalize(a, axis: int = -1) -> Tensor:
    """x / ||x||2 along `axis` (built from primitives, so it backprops)."""
    n = sqrt(tsum(square(a), axis=axis, keepdims=True))
    return div(a, n)
