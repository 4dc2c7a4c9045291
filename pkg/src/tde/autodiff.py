"""Dense f64 tensors with define-by-run reverse-mode differentiation.

A :class:`Tape` records every operation whose inputs require gradients while it
is the active tape of the current thread.  ``tape.backward(loss)`` then walks the
record in reverse, which is a valid reverse topological order because an op is
only ever recorded after all of its inputs exist.

Broadcasting follows numpy rules; gradients are summed back to the operand
shape.  In practice the model only broadcasts row vectors (biases) and column
vectors (per-row weights and masks) over matrices.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from tde.errors import DimensionError, NumericError

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class _Op:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; tapes are thread-confined and may nest (the
    innermost one records).
    """

    def __init__(self) -> None:
        self.ops: list[_Op] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.ops)

    def record(self, out: "Tensor", inputs: tuple, backward: Callable) -> None:
        out.node_id = len(self.ops)
        self.ops.append(_Op(out, inputs, backward))

    def backward(self, loss: "Tensor") -> None:
        """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every recorded leaf."""
        if loss.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, list] = {id(loss): [loss, np.ones_like(loss.data)]}
        for op in reversed(self.ops):
            entry = grads.pop(id(op.out), None)
            if entry is None:
                continue
            input_grads = op.backward(entry[1])
            for inp, g in zip(op.inputs, input_grads):
                if g is None or not inp.requires_grad:
                    continue
                slot = grads.get(id(inp))
                if slot is None:
                    grads[id(inp)] = [inp, g]
                else:
                    slot[1] = slot[1] + g
        # every recorded output was popped above; what remains are leaves
        for tensor, g in grads.values():
            if tensor.grad is None:
                tensor.grad = np.array(g, dtype=np.float64).reshape(tensor.shape)
            else:
                tensor.grad = tensor.grad + g


class Tensor:
    """A row-major float64 array, optionally tracked for differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "node_id", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor data contains NaN or Inf")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node_id: Optional[int] = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.node_id = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, inputs: tuple, backward: Callable) -> Tensor:
    if not np.isfinite(data).all():
        raise NumericError("operation produced NaN or Inf")
    requires = False
    for t in inputs:
        if t.requires_grad:
            requires = True
            break
    out = Tensor._wrap(data, requires)
    if requires:
        tape = active_tape()
        if tape is not None:
            tape.record(out, inputs, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, opname: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{opname}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- binary arithmetic -------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _make(ad * bd, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    if np.any(b.data == 0):
        raise NumericError("division by zero")
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        return (
            _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None,
        )

    return _make(out, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return (
            g @ bd.T if a.requires_grad else None,
            ad.T @ g if b.requires_grad else None,
        )

    # einsum keeps each output row independent of how many rows are stacked,
    # which BLAS does not guarantee; online and truncated passes must agree bitwise
    return _make(np.einsum("ik,kj->ij", ad, bd, optimize=False), (a, b), backward)


# -- unary elementwise -------------------------------------------------------


def relu(a) -> Tensor:
    a = as_tensor(a)
    positive = a.data > 0
    return _make(np.where(positive, a.data, 0.0), (a,), lambda g: (g * positive,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # tanh form avoids exp overflow for large negative inputs
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def sin(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make(np.sin(ad), (a,), lambda g: (g * np.cos(ad),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise NumericError("log of a non-positive value")
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,))


def clamp_min(a, lo: float) -> Tensor:
    a = as_tensor(a)
    keep = a.data > lo
    return _make(np.where(keep, a.data, lo), (a,), lambda g: (g * keep,))


_UNARY = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid, "sin": sin, "exp": exp, "log": log}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op: str, a, b=None) -> Tensor:
    """Apply a named pointwise operation (``add``, ``mul``, ``relu``, ``tanh``, ...)."""
    if op in _BINARY:
        if b is None:
            raise DimensionError(f"{op} needs two operands")
        return _BINARY[op](a, b)
    if op in _UNARY:
        return _UNARY[op](a)
    raise ValueError(f"unknown elementwise op {op!r}")


# -- reductions and shape ops ------------------------------------------------


def _check_axis(a: Tensor, axis) -> None:
    if axis is None:
        return
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"axis {axis} out of range for rank {a.ndim}")


def reduce_sum(a, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    _check_axis(a, axis)
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward)


def reduce_mean(a, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    _check_axis(a, axis)
    count = a.data.size if axis is None else a.shape[axis]
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)

    return _make(np.mean(a.data, axis=axis, keepdims=keepdims), (a,), backward)


def reduce(op: str, a, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    if op == "sum":
        return reduce_sum(a, axis, keepdims)
    if op == "mean":
        return reduce_mean(a, axis, keepdims)
    raise ValueError(f"unknown reduction {op!r}")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    _check_axis(a, axis)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), backward)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a 2-D tensor, got {a.shape}")
    return _make(a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {old} to {shape}") from None
    return _make(out, (a,), lambda g: (g.reshape(old),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    try:
        out = a.data[index]
    except IndexError as exc:
        raise DimensionError(str(exc)) from None
    return _make(np.array(out, dtype=np.float64), (a,), backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors:
        raise DimensionError("concat of no tensors")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tensors, backward)


def gather_rows(a, rows) -> Tensor:
    """Select rows ``a[rows]`` (repeats allowed); gradients scatter-add back."""
    a = as_tensor(a)
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size and (rows.min() < -a.shape[0] or rows.max() >= a.shape[0]):
        raise DimensionError(f"row index out of range for {a.shape[0]} rows")
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, rows, g)
        return (full,)

    return _make(a.data[rows], (a,), backward)


def segment_sum(a, segments, n_segments: int) -> Tensor:
    """Sum rows of ``a`` into ``n_segments`` buckets given by ``segments``.

    Accumulation is sequential in row order, so the result for a bucket does
    not depend on rows belonging to other buckets.
    """
    a = as_tensor(a)
    segments = np.asarray(segments, dtype=np.int64)
    if segments.shape != (a.shape[0],):
        raise DimensionError("segment ids must give one bucket per row")
    if segments.size and (segments.min() < 0 or segments.max() >= n_segments):
        raise DimensionError("segment id out of range")
    out = np.zeros((n_segments,) + a.shape[1:])
    np.add.at(out, segments, a.data)
    return _make(out, (a,), lambda g: (g[segments],))


def dropout(a, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None or ``rate`` is 0."""
    a = as_tensor(a)
    if rng is None or rate <= 0.0:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return mul(a, Tensor._wrap(keep, False))


# -- gradient checking -------------------------------------------------------


def _scalar(value) -> float:
    v = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
    if v.size != 1:
        raise DimensionError("grad_check needs a scalar-valued function")
    out = float(v.reshape(-1)[0])
    if not np.isfinite(out):
        raise NumericError("function value is NaN or Inf")
    return out


def grad_check(f: Callable[[], Tensor], params: Iterable[Tensor], h: float = 1e-5) -> float:
    """Compare tape gradients of ``f`` against central differences.

    ``f`` takes no arguments and reads ``params`` (whose data is perturbed in
    place and restored).  Returns the max over all coordinates of
    ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    params = list(params)
    for p in params:
        p.grad = None
    with Tape() as tape:
        out = f()
    _scalar(out)
    tape.backward(out)

    worst = 0.0
    for p in params:
        analytic = np.zeros(p.shape) if p.grad is None else p.grad.reshape(p.shape)
        flat = p.data.reshape(-1)
        if not np.shares_memory(flat, p.data):
            raise DimensionError("parameter data must be contiguous")
        ana_flat = analytic.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            try:
                flat[k] = orig + h
                plus = _scalar(f())
                flat[k] = orig - h
                minus = _scalar(f())
            finally:
                flat[k] = orig
            numeric = (plus - minus) / (2.0 * h)
            err = abs(ana_flat[k] - numeric) / max(1.0, abs(ana_flat[k]))
            worst = max(worst, err)
    return worst
