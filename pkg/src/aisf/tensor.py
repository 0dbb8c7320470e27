"""Dense float64 tensors with a reverse-mode gradient tape.

Every differentiable primitive computes its result with numpy and, when a
:class:`GradTape` is active and some input requires a gradient, appends a
record holding a vector-Jacobian closure. ``GradTape.backward`` replays the
records in reverse order of recording, which is a valid reverse topological
order because a record is only appended after all of its inputs exist.
"""

from __future__ import annotations

import zlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "GradTape",
    "Rng",
    "ShapeError",
    "matmul",
    "transpose",
    "crosscorr1d",
    "add",
    "sub",
    "mul",
    "scale",
    "tanh",
    "sigmoid",
    "relu",
    "elementwise",
    "clamp",
    "reshape",
    "permute",
    "take",
    "narrow",
    "concat",
    "stack",
    "sum_all",
    "mean_all",
]


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


def _contiguous(data) -> np.ndarray:
    # np.ascontiguousarray would promote 0-d scalars to shape (1,)
    arr = np.asarray(data, dtype=np.float64)
    return arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)


class Tensor:
    """Immutable-shape array of 64-bit reals.

    ``data`` is always a C-contiguous ``float64`` ndarray; ``shape`` is fixed
    at construction. Reshaping or permuting produces a new tensor.
    """

    __slots__ = ("_data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self._data = _contiguous(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def data(self) -> np.ndarray:
        return self._data

    @data.setter
    def data(self, value) -> None:
        value = _contiguous(value)
        if value.shape != self._data.shape:
            raise ShapeError(f"cannot assign shape {value.shape} to tensor of shape {self._data.shape}")
        self._data = value

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def numpy(self) -> np.ndarray:
        return self._data

    def item(self) -> float:
        if self._data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self._data.reshape(()))

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


# ---------------------------------------------------------------------------
# tape

_ACTIVE: list["GradTape"] = []


class _Record:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


class GradTape:
    """Ordered record of primitive operations.

    Use as a context manager; operations performed inside it on tensors that
    require gradients are recorded. Tapes nest, the innermost one records.
    """

    def __init__(self) -> None:
        self.records: list[_Record] = []

    def __enter__(self) -> "GradTape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Propagate d(loss)/d(.) through the recorded operations.

        Returns a mapping from every leaf tensor that requires a gradient to
        its gradient, and also stores it in ``leaf.grad``.
        """
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self.records:
            raise ValueError("tape is empty; nothing to differentiate")
        produced = {id(r.out) for r in self.records}
        grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
        leaves: dict[int, Tensor] = {}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            in_grads = rec.vjp(g)
            for t, gi in zip(rec.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if key not in produced:
                    leaves[key] = t
        out: dict[Tensor, np.ndarray] = {}
        for key, t in leaves.items():
            g = grads.get(key)
            if g is None:
                g = np.zeros(t.shape)
            t.grad = g
            out[t] = g
        return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs and _ACTIVE:
        _ACTIVE[-1].records.append(_Record(out, tuple(inputs), vjp))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a (p, q) and a (q, r) tensor."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data

    def vjp(g):
        return g @ B.T, A.T @ g

    return _result(A @ B, (a, b), vjp)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got {a.shape}")
    return permute(a, (1, 0))


def crosscorr1d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Same-length 1-D cross-correlation.

    x: (B, Cin, L), weight: (Cout, Cin, k) with k odd, bias: (Cout,).
    The input is zero padded by (k - 1) // 2 on both ends; stride 1.
    """
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if weight.ndim != 3:
        raise ShapeError(f"crosscorr1d: weight must be (Cout, Cin, k), got {weight.shape}")
    cout, cin, k = weight.shape
    if k % 2 == 0:
        raise ShapeError(f"crosscorr1d: kernel size must be odd, got {k}")
    if x.ndim != 3 or x.shape[1] != cin:
        raise ShapeError(f"crosscorr1d: input {x.shape} does not have {cin} channels")
    if bias.shape != (cout,):
        raise ShapeError(f"crosscorr1d: bias {bias.shape} does not match {cout} output channels")
    B, _, L = x.shape
    pad = (k - 1) // 2
    padded = np.pad(x.data, ((0, 0), (0, 0), (pad, pad)))
    win = sliding_window_view(padded, k, axis=2)  # (B, Cin, L, k)
    W = weight.data
    out = np.einsum("bplj,opj->bol", win, W, optimize=True) + bias.data[None, :, None]

    def vjp(g):
        gW = np.einsum("bol,bplj->opj", g, win, optimize=True)
        gb = g.sum(axis=(0, 2))
        gpad = np.zeros_like(padded)
        for j in range(k):
            gpad[:, :, j : j + L] += np.einsum("bol,op->bpl", g, W[:, :, j], optimize=True)
        return gpad[:, :, pad : pad + L], gW, gb

    return _result(out, (x, weight, bias), vjp)


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("mul", a, b)
    A, B = a.data, b.data
    return _result(A * B, (a, b), lambda g: (_unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,))


def tanh(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result(y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def clamp(a: Tensor, lo, hi, straight_through: bool = False) -> Tensor:
    """Clamp to [lo, hi]; bounds broadcast against ``a``.

    The gradient is zero where a value was clamped, unless ``straight_through``
    is set, in which case the gradient passes unchanged (identity backward).
    """
    a = _as_tensor(a)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    y = np.minimum(np.maximum(a.data, lo), hi)
    if straight_through:
        return _result(y, (a,), lambda g: (g,))
    inside = (a.data >= lo) & (a.data <= hi)
    return _result(y, (a,), lambda g: (g * inside,))


_UNARY = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, a, b=None) -> Tensor:
    """Dispatch by name: add, sub, mul, tanh, sigmoid, relu, scale."""
    if op in _UNARY:
        return _UNARY[op](a)
    if op in _BINARY:
        return _BINARY[op](a, b)
    if op == "scale":
        return scale(a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


# ---------------------------------------------------------------------------
# shape


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {src} as {tuple(shape)}") from None
    return _result(out, (a,), lambda g: (g.reshape(src),))


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    """Axis permutation, materialized as a contiguous copy."""
    a = _as_tensor(a)
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"permute: {axes} is not a permutation of {a.ndim} axes")
    inv = tuple(np.argsort(axes))
    return _result(np.ascontiguousarray(a.data.transpose(axes)), (a,), lambda g: (g.transpose(inv),))


def take(a: Tensor, index: int, axis: int) -> Tensor:
    """Select one position along ``axis``, dropping that axis."""
    a = _as_tensor(a)
    src = a.shape

    def vjp(g):
        full = np.zeros(src)
        sl = [slice(None)] * len(src)
        sl[axis] = index
        full[tuple(sl)] = g
        return (full,)

    return _result(np.take(a.data, index, axis=axis), (a,), vjp)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice ``[start, start + length)`` along ``axis``."""
    a = _as_tensor(a)
    src = a.shape
    if start < 0 or start + length > src[axis]:
        raise ShapeError(f"narrow: [{start}, {start + length}) out of range for axis of size {src[axis]}")
    sl = [slice(None)] * len(src)
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def vjp(g):
        full = np.zeros(src)
        full[sl] = g
        return (full,)

    return _result(a.data[sl], (a,), vjp)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    cuts = np.cumsum(sizes)[:-1]
    return _result(out, tensors, lambda g: tuple(np.split(g, cuts, axis=axis)))


def stack(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"stack: incompatible shapes {[t.shape for t in tensors]}") from None
    n = len(tensors)
    return _result(out, tensors, lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


# ---------------------------------------------------------------------------
# reductions


def sum_all(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    src = a.shape
    return _result(np.asarray(a.data.sum()), (a,), lambda g: (np.full(src, np.asarray(g).item()),))


def mean_all(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    src, n = a.shape, a.size
    return _result(np.asarray(a.data.mean()), (a,), lambda g: (np.full(src, np.asarray(g).item() / n),))


# ---------------------------------------------------------------------------
# random numbers


class Rng:
    """Seeded stream backed by numpy's Philox4x64 counter-based generator.

    Philox output depends only on (key, counter), so a given seed produces the
    same sequence on every platform. Independent substreams are derived with
    :meth:`child`, keyed by integers or strings (strings are hashed with CRC32).
    """

    def __init__(self, seed: int, key: Iterable[int] = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.key = tuple(key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self.gen = np.random.Generator(np.random.Philox(ss))

    def child(self, name: int | str) -> "Rng":
        if isinstance(name, str):
            name = zlib.crc32(name.encode("utf-8"))
        return Rng(self.seed, self.key + (int(name),))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def random(self, size=None):
        return self.gen.random(size)

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in [low, high], both ends inclusive."""
        return self.gen.integers(low, high, size, endpoint=True)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self.gen.choice(n, size=size, replace=replace)

    def pareto(self, a: float, size=None):
        return self.gen.pareto(a, size)

    def lognormal(self, mean=0.0, sigma=1.0, size=None):
        return self.gen.lognormal(mean, sigma, size)
