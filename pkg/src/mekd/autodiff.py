"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every operation records its parents and a backward closure; calling
``backward()`` on a scalar loss walks the graph in reverse topological
order and accumulates gradients into every tensor on a differentiable
path.  Parents are stored as tuples (never sets) so traversal order,
and therefore floating-point accumulation order, is identical across
runs: same seed, same bits.

Values are checked for NaN/Inf as they are produced; a non-finite
result raises :class:`NonFiniteError` naming the operation instead of
propagating silently.
"""

from __future__ import annotations

import contextlib

import numpy as np


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf values."""

    def __init__(self, op: str):
        super().__init__(f"non-finite values produced by op '{op}'")
        self.op = op


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (pure evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """An n-dimensional float array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError("leaf")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._bwd = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return self.data.item()  # requires a size-1 value

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Populate ``grad`` for every tensor reachable from this scalar."""
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.shape}")
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._bwd is not None:
                node._bwd()

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, -other if isinstance(other, (int, float)) else mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def transpose(self):
        return transpose(self)


def _topo_order(root: Tensor) -> list[Tensor]:
    # Iterative DFS postorder; parent tuples make the order deterministic.
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def constant(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


def _wrap(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], op: str, bwd) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._bwd = bwd(out)
    else:
        out.requires_grad = False
        out._parents = ()
        out._bwd = None
    return out


# -- arithmetic ---------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    """Elementwise add; supports same shapes, a trailing bias vector, or a scalar."""
    if isinstance(b, (int, float)):
        a = _wrap(a)
        data = a.data + b

        def bwd(out):
            def _b():
                if a.requires_grad:
                    a._accumulate(out.grad)
            return _b

        return _result(data, (a,), "add", bwd)

    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape and not (a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]):
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
    data = a.data + b.data

    def bwd(out):
        def _b():
            if a.requires_grad:
                a._accumulate(out.grad)
            if b.requires_grad:
                g = out.grad
                if b.shape != out.shape:
                    g = g.sum(axis=0)
                b._accumulate(g)
        return _b

    return _result(data, (a, b), "add", bwd)


def mul(a: Tensor, b) -> Tensor:
    """Elementwise multiply by a same-shape tensor or a python scalar."""
    a = _wrap(a)
    if isinstance(b, (int, float)):
        data = a.data * b

        def bwd(out):
            def _b():
                if a.requires_grad:
                    a._accumulate(out.grad * b)
            return _b

        return _result(data, (a,), "mul", bwd)

    b = _wrap(b)
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    data = a.data * b.data

    def bwd(out):
        def _b():
            if a.requires_grad:
                a._accumulate(out.grad * b.data)
            if b.requires_grad:
                b._accumulate(out.grad * a.data)
        return _b

    return _result(data, (a, b), "mul", bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} vs {b.shape}")
    data = a.data @ b.data

    def bwd(out):
        def _b():
            if a.requires_grad:
                a._accumulate(out.grad @ b.data.T)
            if b.requires_grad:
                b._accumulate(a.data.T @ out.grad)
        return _b

    return _result(data, (a, b), "matmul", bwd)


def transpose(a: Tensor) -> Tensor:
    a = _wrap(a)

    def bwd(out):
        def _b():
            if a.requires_grad:
                a._accumulate(out.grad.T)
        return _b

    return _result(a.data.T.copy(), (a,), "transpose", bwd)


def reshape(a: Tensor, shape) -> Tensor:
    a = _wrap(a)
    data = a.data.reshape(shape).copy()

    def bwd(out):
        def _b():
            if a.requires_grad:
                a._accumulate(out.grad.reshape(a.shape))
        return _b

    return _result(data, (a,), "reshape", bwd)


def concat(parts: list[Tensor], axis: int = 1) -> Tensor:
    parts = [_wrap(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(out):
        def _b():
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                if p.requires_grad:
                    idx = [slice(None)] * out.grad.ndim
                    idx[axis] = slice(lo, hi)
                    p._accumulate(out.grad[tuple(idx)])
        return _b

    return _result(data, tuple(parts), "concat", bwd)


# -- elementwise nonlinearities ------------------------------------------


def relu(a: Tensor) -> Tensor:
    a = _wrap(a)
    mask = a.data > 0

    def bwd(out):
        def _b():
            if a.requires_grad:
                a._accumulate(out.grad * mask)
        return _b

    return _result(np.where(mask, a.data, 0.0), (a,), "relu", bwd)


def leaky_relu(a: Tensor, alpha: float = 0.2) -> Tensor:
    a = _wrap(a)
    slope = np.where(a.data > 0, 1.0, alpha)

    def bwd(out):
        def _b():
            if a.requires_grad:
                a._accumulate(out.grad * slope)
        return _b

    return _result(a.data * slope, (a,), "leaky_relu", bwd)


def tanh(a: Tensor) -> Tensor:
    a = _wrap(a)
    data = np.tanh(a.data)

    def bwd(out):
        def _b():
            if a.requires_grad:
                a._accumulate(out.grad * (1.0 - out.data * out.data))
        return _b

    return _result(data, (a,), "tanh", bwd)


def sigmoid(a: Tensor) -> Tensor:
    a = _wrap(a)
    # Stable in both tails.
    data = np.empty_like(a.data)
    pos = a.data >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    e = np.exp(a.data[~pos])
    data[~pos] = e / (1.0 + e)

    def bwd(out):
        def _b():
            if a.requires_grad:
                a._accumulate(out.grad * out.data * (1.0 - out.data))
        return _b

    return _result(data, (a,), "sigmoid", bwd)


def softmax(a: Tensor) -> Tensor:
    """Row-wise softmax over the last axis of a 2-d tensor."""
    a = _wrap(a)
    if a.data.ndim != 2:
        raise ValueError(f"softmax expects a 2-d tensor, got shape {a.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=1, keepdims=True)

    def bwd(out):
        def _b():
            if a.requires_grad:
                y, g = out.data, out.grad
                a._accumulate(y * (g - (g * y).sum(axis=1, keepdims=True)))
        return _b

    return _result(data, (a,), "softmax", bwd)


def log(a: Tensor) -> Tensor:
    a = _wrap(a)
    with np.errstate(divide="raise", invalid="raise"):
        try:
            data = np.log(a.data)
        except FloatingPointError:
            raise NonFiniteError("log") from None

    def bwd(out):
        def _b():
            if a.requires_grad:
                a._accumulate(out.grad / a.data)
        return _b

    return _result(data, (a,), "log", bwd)


def exp(a: Tensor) -> Tensor:
    a = _wrap(a)
    with np.errstate(over="ignore"):  # overflow becomes inf; _result rejects it
        data = np.exp(a.data)

    def bwd(out):
        def _b():
            if a.requires_grad:
                a._accumulate(out.grad * out.data)
        return _b

    return _result(data, (a,), "exp", bwd)


def sqrt(a: Tensor) -> Tensor:
    """Square root with subgradient 0 at exactly 0."""
    a = _wrap(a)
    data = np.sqrt(a.data)

    def bwd(out):
        def _b():
            if a.requires_grad:
                g = np.where(out.data > 0, 0.5 / np.where(out.data > 0, out.data, 1.0), 0.0)
                a._accumulate(out.grad * g)
        return _b

    return _result(data, (a,), "sqrt", bwd)


def square(a: Tensor) -> Tensor:
    a = _wrap(a)

    def bwd(out):
        def _b():
            if a.requires_grad:
                a._accumulate(out.grad * 2.0 * a.data)
        return _b

    return _result(a.data * a.data, (a,), "square", bwd)


def absolute(a: Tensor) -> Tensor:
    a = _wrap(a)
    sign = np.sign(a.data)

    def bwd(out):
        def _b():
            if a.requires_grad:
                a._accumulate(out.grad * sign)
        return _b

    return _result(np.abs(a.data), (a,), "abs", bwd)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes only through unclipped entries."""
    a = _wrap(a)
    mask = (a.data >= lo) & (a.data <= hi)

    def bwd(out):
        def _b():
            if a.requires_grad:
                a._accumulate(out.grad * mask)
        return _b

    return _result(np.clip(a.data, lo, hi), (a,), "clip", bwd)


# -- reductions ----------------------------------------------------------


def reduce_sum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    a = _wrap(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(out):
        def _b():
            if a.requires_grad:
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                a._accumulate(np.broadcast_to(g, a.shape).copy() if g.shape != a.shape else g)
        return _b

    return _result(np.asarray(data), (a,), "sum", bwd)


def reduce_mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    a = _wrap(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else a.shape[axis]

    def bwd(out):
        def _b():
            if a.requires_grad:
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                g = np.broadcast_to(g, a.shape) / count
                a._accumulate(g)
        return _b

    return _result(np.asarray(data), (a,), "mean", bwd)
