"""Dense float64 tensors with a minimal reverse-mode autodiff tape.

Implements exactly the operations the transformer classifier needs:
matmul with broadcast batch dimensions, elementwise arithmetic, softmax /
log-softmax / layer norm over the last axis, relu, inverted dropout,
reductions, and shape moves. The graph is built define-by-run through
closures and released after each backward() so training steps do not
accumulate state. Everything is float64 and single-threaded; two runs
from the same seeds are bit-identical.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import ContractError, ParameterError, ShapeError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]

_grad_enabled = True


class no_grad:
    """Context manager that suspends tape recording (used for evaluation)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """A float64 n-d array that can participate in reverse-mode differentiation.

    `data` is always C-contiguous (row-major). `grad`, when present, is a
    plain ndarray of the same shape; it accumulates across backward calls
    until `zero_grad` clears it. Tensors are immutable after construction
    except for gradient accumulation (the optimizer, which owns the
    training thread, updates parameter data in place).
    """

    __slots__ = ("data", "requires_grad", "grad", "_backward", "_parents")

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        # order="C" keeps scalars 0-d, unlike ascontiguousarray
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._parents: tuple[Tensor, ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every requires_grad leaf, then free the tape.

        `self` must be a scalar (one element). Repeated backward calls on
        separate graphs keep accumulating into the same parameter grads.
        """
        if self.data.size != 1:
            raise ContractError(f"backward() requires a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("backward() called on a tensor with no recorded graph")

        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        # Free the tape: drop graph edges and intermediate grad buffers.
        for node in order:
            if node._parents:
                node._backward = None
                node._parents = ()
                node.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Operator sugar; the module-level functions hold the actual rules.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, shape: Sequence[int]) -> "Tensor":
        return reshape(self, shape)

    def swapaxes(self, axis1: int, axis2: int) -> "Tensor":
        return swapaxes(self, axis1, axis2)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_mean(self, axis=axis, keepdims=keepdims)


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _record(out: Tensor, parents: tuple[Tensor, ...], backward: Callable[[np.ndarray], None]) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _accumulate(t: Tensor, grad: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(grad, dtype=np.float64, order="C")
    else:
        t.grad += grad


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` over axes that were broadcast up from `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = Tensor(a.data + b.data)
    except ValueError:
        raise ShapeError(f"add operands do not broadcast: {a.shape} vs {b.shape}") from None

    def backward(g: np.ndarray) -> None:
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _record(out, (a, b), backward)


def neg(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data)

    def backward(g: np.ndarray) -> None:
        _accumulate(a, -g)

    return _record(out, (a,), backward)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Elementwise (broadcasting) product."""
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = Tensor(a.data * b.data)
    except ValueError:
        raise ShapeError(f"mul operands do not broadcast: {a.shape} vs {b.shape}") from None

    def backward(g: np.ndarray) -> None:
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _record(out, (a, b), backward)


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast.

    Backward rule: dA = dC @ B^T, dB = A^T @ dC (summed over broadcast axes).
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul requires at least 2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    try:
        out = Tensor(a.data @ b.data)
    except ValueError:
        raise ShapeError(f"matmul batch dimensions do not broadcast: {a.shape} @ {b.shape}") from None

    def backward(g: np.ndarray) -> None:
        _accumulate(a, _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape))
        _accumulate(b, _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape))

    return _record(out, (a, b), backward)


def relu(a: ArrayLike) -> Tensor:
    """Elementwise max(0, x); the subgradient at exactly 0 is fixed to 0."""
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0))

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g * (a.data > 0.0))

    return _record(out, (a,), backward)


def exp(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)
    out = Tensor(out_data)

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g * out_data)

    return _record(out, (a,), backward)


def log(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.log(a.data))

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g / a.data)

    return _record(out, (a,), backward)


def tensor_sum(a: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def backward(g: np.ndarray) -> None:
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape))
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g, a.shape))

    return _record(out, (a,), backward)


def tensor_mean(a: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.shape[ax]
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a: ArrayLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    try:
        out = Tensor(a.data.reshape(shape))
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} into {shape}") from None

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g.reshape(a.shape))

    return _record(out, (a,), backward)


def swapaxes(a: ArrayLike, axis1: int, axis2: int) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.swapaxes(a.data, axis1, axis2))

    def backward(g: np.ndarray) -> None:
        _accumulate(a, np.swapaxes(g, axis1, axis2))

    return _record(out, (a,), backward)


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("concat requires at least one tensor")
    try:
        out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    except ValueError:
        raise ShapeError(f"concat shapes incompatible: {[p.shape for p in parts]}") from None
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g: np.ndarray) -> None:
        moved = np.moveaxis(g, axis, 0)
        for part, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            _accumulate(part, np.moveaxis(moved[start:stop], 0, axis))

    return _record(out, tuple(parts), backward)


def getitem(a: ArrayLike, index) -> Tensor:
    """Basic (slice/int/ellipsis) indexing with gradient scatter on backward."""
    a = as_tensor(a)
    out = Tensor(a.data[index])

    def backward(g: np.ndarray) -> None:
        buf = np.zeros_like(a.data)
        buf[index] += g
        _accumulate(a, buf)

    return _record(out, (a,), backward)


def softmax(a: ArrayLike) -> Tensor:
    """Softmax over the last axis, computed with max-subtraction for stability."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def backward(g: np.ndarray) -> None:
        inner = (g * y).sum(axis=-1, keepdims=True)
        _accumulate(a, y * (g - inner))

    return _record(out, (a,), backward)


def log_softmax(a: ArrayLike) -> Tensor:
    """log(softmax) over the last axis via the log-sum-exp form."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    out = Tensor(y)

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g - np.exp(y) * g.sum(axis=-1, keepdims=True))

    return _record(out, (a,), backward)


def layer_norm(x: ArrayLike, gain: ArrayLike, bias: ArrayLike, eps: float) -> Tensor:
    """Normalize each last-axis slice to zero mean / unit variance, then scale and shift.

    Uses the biased variance; `eps` keeps constant slices finite.
    """
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if eps <= 0.0:
        raise ParameterError(f"layer_norm eps must be positive, got {eps}")
    d = x.shape[-1] if x.ndim else 0
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm gain/bias must have shape ({d},), got {gain.shape} and {bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = Tensor(xhat * gain.data + bias.data)

    def backward(g: np.ndarray) -> None:
        reduce_axes = tuple(range(g.ndim - 1))
        _accumulate(bias, g.sum(axis=reduce_axes))
        _accumulate(gain, (g * xhat).sum(axis=reduce_axes))
        dxhat = g * gain.data
        mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
        mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
        _accumulate(x, inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat))

    return _record(out, (x, gain, bias), backward)


def dropout(x: ArrayLike, rate: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: train-time mask scaled by 1/(1-rate); identity in eval mode."""
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ParameterError("dropout in training mode requires a seeded generator")
    keep = rng.random(x.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    mask = keep * scale
    out = Tensor(x.data * mask)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * mask)

    return _record(out, (x,), backward)
