"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation returns a new :class:`Tensor`. When gradient tracking is on
and at least one input requires a gradient, the result remembers its parents
and a closure that pushes the upstream gradient back to them.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

RNG_ALGORITHM = "PCG64"

_state = threading.local()


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """Operand is outside the domain of the operation."""


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """A float64 array plus an optional gradient buffer and graph links."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _backward=None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self) -> None:
        backward(self)

    __matmul__ = lambda self, other: matmul(self, other)  # noqa: E731
    __add__ = lambda self, other: add(self, other)  # noqa: E731
    __sub__ = lambda self, other: sub(self, other)  # noqa: E731
    __mul__ = lambda self, other: mul(self, other)  # noqa: E731


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    if grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor._fast(data, True, tuple(parents), backward_fn)
    return Tensor._fast(data, False, (), None)


def _fast(data, requires_grad, parents, backward_fn):
    t = Tensor.__new__(Tensor)
    t.data = data
    t.grad = None
    t.requires_grad = requires_grad
    t._parents = parents
    t._backward = backward_fn
    return t


Tensor._fast = staticmethod(_fast)


class _RowGrad:
    """Gradient that is zero except for one row of a matrix."""

    __slots__ = ("index", "row", "shape")

    def __init__(self, index: int, row: np.ndarray, shape: tuple[int, ...]):
        self.index, self.row, self.shape = index, row, shape

    def dense(self) -> np.ndarray:
        full = np.zeros(self.shape)
        full[self.index] = self.row
        return full


def _add_into(buf: np.ndarray | None, g, shape) -> np.ndarray:
    if isinstance(g, _RowGrad):
        if buf is None:
            buf = np.zeros(shape)
        buf[g.index] += g.row
        return buf
    if buf is None:
        return np.array(g, dtype=np.float64)
    buf += g
    return buf


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    return g


def _check_elementwise(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape:
        return
    if a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        return
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------- arithmetic
#
# Each backward closure maps the upstream gradient to a tuple holding one
# gradient (or None) per parent, in parent order.


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for (m,k)@(k,n), (m,k)@(k,) and (k,)@(k,n)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2) or (a.data.ndim, b.data.ndim) == (1, 1):
        raise DimensionError(f"matmul: unsupported ranks for shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")

    def backward_fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = np.outer(g, b.data) if b.data.ndim == 1 else g @ b.data.T
        if b.requires_grad:
            gb = np.outer(a.data, g) if a.data.ndim == 1 else a.data.T @ g
        return ga, gb

    return _result(a.data @ b.data, (a, b), backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -_unbroadcast(g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product."""
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b, "mul")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, _unbroadcast(g * a.data, b.shape)))


def scale(x: Tensor, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return _result(x.data * c, (x,), lambda g: (g * c,))


def sum_(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    x = as_tensor(x)
    return _result(np.array(x.data.sum()), (x,), lambda g: (np.full(x.shape, float(g)),))


def pick(x: Tensor, index: int) -> Tensor:
    """Scalar element ``x[index]`` of a rank-1 tensor."""
    x = as_tensor(x)
    if x.data.ndim != 1:
        raise DimensionError(f"pick: expected rank-1 tensor, got shape {x.shape}")
    if not 0 <= index < x.shape[0]:
        raise IndexError(f"pick: index {index} out of range for length {x.shape[0]}")

    def backward_fn(g):
        full = np.zeros(x.shape)
        full[index] = g
        return (full,)

    return _result(np.array(x.data[index]), (x,), backward_fn)


def log_clamped(x: Tensor, floor: float = 1e-12) -> Tensor:
    """Natural log of ``max(x, floor)``; no gradient flows through clamped entries."""
    x = as_tensor(x)
    clipped = np.maximum(x.data, floor)
    passes = x.data > floor
    return _result(np.log(clipped), (x,), lambda g: (np.where(passes, g / clipped, 0.0),))


def take_row(matrix: Tensor, index: int) -> Tensor:
    """Row ``index`` of a rank-2 tensor; the gradient lands in that row only."""
    matrix = as_tensor(matrix)
    if matrix.data.ndim != 2:
        raise DimensionError(f"take_row: expected rank-2 tensor, got shape {matrix.shape}")
    index = int(index)
    if not 0 <= index < matrix.shape[0]:
        raise IndexError(f"take_row: index {index} out of range for {matrix.shape[0]} rows")
    return _result(matrix.data[index].copy(), (matrix,), lambda g: (_RowGrad(index, g, matrix.shape),))


# --------------------------------------------------------------- activations


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    # split on sign so exp never overflows
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh_(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _result(out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def softmax(v: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max-subtraction."""
    v = as_tensor(v)
    if v.data.ndim == 0 or v.shape[-1] == 0:
        raise DomainError("softmax: empty vector")
    e = np.exp(v.data - v.data.max(axis=-1, keepdims=True))
    out = e / e.sum(axis=-1, keepdims=True)
    return _result(out, (v,), lambda g: (out * (g - (g * out).sum(axis=-1, keepdims=True)),))


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Join along the last axis: ``a``'s elements come first."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != b.data.ndim or a.data.ndim not in (1, 2):
        raise DimensionError(f"concat: incompatible ranks for shapes {a.shape} and {b.shape}")
    if a.data.ndim == 2 and a.shape[0] != b.shape[0]:
        raise DimensionError(f"concat: batch extents differ for shapes {a.shape} and {b.shape}")
    k = a.shape[-1]
    return _result(np.concatenate([a.data, b.data], axis=-1), (a, b), lambda g: (g[..., :k], g[..., k:]))


# ------------------------------------------------------------------ backward


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every leaf tensor that ``loss`` depends on.

    Leaf buffers accumulate, so one backward pass per sample of a minibatch
    sums the per-sample contributions. Intermediate nodes keep no gradient.
    """
    if loss.data.size != 1:
        raise DomainError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological(loss)
    pending: dict[int, object] = {id(loss): np.ones(loss.shape)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = _add_into(node.grad, g, node.shape)
            continue
        if isinstance(g, _RowGrad):
            g = g.dense()
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            prev = pending.get(key)
            if prev is None:
                pending[key] = pg
            elif isinstance(prev, _RowGrad) or isinstance(pg, _RowGrad):
                pending[key] = _add_into(_add_into(None, prev, parent.shape), pg, parent.shape)
            else:
                pending[key] = prev + pg


# ------------------------------------------------------------------ oracles


def finite_diff(f: Callable[[np.ndarray], float], x, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if eps <= 0:
        raise DomainError("finite_diff: eps must be positive")
    x = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = float(f(x))
        flat[i] = orig - eps
        down = float(f(x))
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Per-coordinate |a-n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


# ---------------------------------------------------------------- randomness


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator; the bit stream is fixed by the algorithm, not the platform."""
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def uniform(rng: np.random.Generator, shape, low: float, high: float, requires_grad: bool = False) -> Tensor:
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=requires_grad)


def normal(rng: np.random.Generator, shape, std: float = 1.0, requires_grad: bool = False) -> Tensor:
    return Tensor(rng.standard_normal(size=shape) * std, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)

