"""Parameterized layers built on the tensor tape.

Each layer owns its parameters as ``Tensor`` objects with ``requires_grad``
set, exposes them through :meth:`Module.named_parameters` in a stable order,
and is initialized by :func:`init_params` from an explicit :class:`Rng`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Rng, ShapeError, Tensor

__all__ = [
    "Module",
    "Linear",
    "Conv1d",
    "LSTM",
    "GRU",
    "Elman",
    "DropoutSpec",
    "dropout",
    "lstm_step",
    "gru_step",
    "elman_step",
    "init_params",
    "make_recurrent",
]


class Module:
    """Container whose parameters are discovered from its attributes.

    Attribute order defines parameter order: a ``Tensor`` with
    ``requires_grad`` is a parameter, a ``Module`` or list of modules is a child.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def reset_parameters(self, rng: Rng) -> None:
        for key, value in vars(self).items():
            if isinstance(value, Module):
                value.reset_parameters(rng.child(key))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        item.reset_parameters(rng.child(f"{key}.{i}"))

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def _param(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _uniform_fill(p: Tensor, fan_in: int, rng: Rng) -> None:
    bound = 1.0 / math.sqrt(fan_in)
    p.data = rng.uniform(-bound, bound, p.shape)


def init_params(layer: Module, rng: Rng) -> Module:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) per matrix, biases zero."""
    layer.reset_parameters(rng)
    return layer


class Linear(Module):
    def __init__(self, in_features: int, out_features: int):
        if in_features < 1 or out_features < 1:
            raise ValueError("Linear needs positive sizes")
        self.in_features = in_features
        self.out_features = out_features
        self.W = _param(out_features, in_features)
        self.b = _param(out_features)

    def reset_parameters(self, rng: Rng) -> None:
        _uniform_fill(self.W, self.in_features, rng.child("W"))
        self.b.data = np.zeros(self.b.shape)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"Linear expects last dim {self.in_features}, got {x.shape}")
        lead = x.shape[:-1]
        flat = T.reshape(x, (-1, self.in_features)) if x.ndim != 2 else x
        y = T.add(T.matmul(flat, T.transpose(self.W)), self.b)
        return T.reshape(y, lead + (self.out_features,)) if x.ndim != 2 else y


class Conv1d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3):
        if kernel_size % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {kernel_size}")
        if in_channels < 1 or out_channels < 1:
            raise ValueError("channel counts must be >= 1")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.W = _param(out_channels, in_channels, kernel_size)
        self.b = _param(out_channels)

    def reset_parameters(self, rng: Rng) -> None:
        _uniform_fill(self.W, self.in_channels * self.kernel_size, rng.child("W"))
        self.b.data = np.zeros(self.b.shape)

    def __call__(self, x: Tensor) -> Tensor:
        return T.crosscorr1d(x, self.W, self.b)


# ---------------------------------------------------------------------------
# recurrent cells

_LSTM_GATES = ("i", "f", "g", "o")
_GRU_GATES = ("r", "z", "n")


class _Cell(Module):
    gates: tuple[str, ...] = ()

    def __init__(self, input_size: int, hidden_size: int):
        self.input_size = input_size
        self.hidden_size = hidden_size
        for gname in self.gates:
            setattr(self, f"W_i{gname}", _param(hidden_size, input_size))
        for gname in self.gates:
            setattr(self, f"W_h{gname}", _param(hidden_size, hidden_size))
        for gname in self.gates:
            setattr(self, f"b_i{gname}", _param(hidden_size))
        for gname in self.gates:
            setattr(self, f"b_h{gname}", _param(hidden_size))

    def reset_parameters(self, rng: Rng) -> None:
        for gname in self.gates:
            _uniform_fill(getattr(self, f"W_i{gname}"), self.input_size, rng.child(f"W_i{gname}"))
            _uniform_fill(getattr(self, f"W_h{gname}"), self.hidden_size, rng.child(f"W_h{gname}"))
            getattr(self, f"b_i{gname}").data = np.zeros(self.hidden_size)
            getattr(self, f"b_h{gname}").data = np.zeros(self.hidden_size)

    def _stacked(self, kind: str) -> tuple[Tensor, Tensor]:
        """Gate matrices of one kind ("i" or "h") stacked row-wise, transposed, plus summed bias."""
        W = T.concat([getattr(self, f"W_{kind}{g}") for g in self.gates], axis=0)
        b = T.concat([getattr(self, f"b_{kind}{g}") for g in self.gates], axis=0)
        return T.transpose(W), b

    def _input_projection(self, x: Tensor) -> Tensor:
        B, L, F = x.shape
        WiT, bi = self._stacked("i")
        P = T.add(T.matmul(T.reshape(x, (B * L, F)), WiT), bi)
        return T.reshape(P, (B, L, len(self.gates) * self.hidden_size))

    def run(self, x: Tensor, reverse: bool = False) -> tuple[list[Tensor], Tensor]:
        raise NotImplementedError


class LSTMCell(_Cell):
    gates = _LSTM_GATES

    def run(self, x, reverse=False):
        B, L, _ = x.shape
        H = self.hidden_size
        P = self._input_projection(x)
        WhT, bh = self._stacked("h")
        h = Tensor(np.zeros((B, H)))
        c = Tensor(np.zeros((B, H)))
        outs: list[Tensor | None] = [None] * L
        for t in (range(L - 1, -1, -1) if reverse else range(L)):
            z = T.add(T.add(T.take(P, t, axis=1), T.matmul(h, WhT)), bh)
            i = T.sigmoid(T.narrow(z, 1, 0, H))
            f = T.sigmoid(T.narrow(z, 1, H, H))
            g = T.tanh(T.narrow(z, 1, 2 * H, H))
            o = T.sigmoid(T.narrow(z, 1, 3 * H, H))
            c = T.add(T.mul(f, c), T.mul(i, g))
            h = T.mul(o, T.tanh(c))
            outs[t] = h
        return outs, h


class GRUCell(_Cell):
    gates = _GRU_GATES

    def run(self, x, reverse=False):
        B, L, _ = x.shape
        H = self.hidden_size
        P = self._input_projection(x)
        WhT, bh = self._stacked("h")
        h = Tensor(np.zeros((B, H)))
        outs: list[Tensor | None] = [None] * L
        for t in (range(L - 1, -1, -1) if reverse else range(L)):
            p = T.take(P, t, axis=1)
            q = T.add(T.matmul(h, WhT), bh)
            r = T.sigmoid(T.add(T.narrow(p, 1, 0, H), T.narrow(q, 1, 0, H)))
            z = T.sigmoid(T.add(T.narrow(p, 1, H, H), T.narrow(q, 1, H, H)))
            n = T.tanh(T.add(T.narrow(p, 1, 2 * H, H), T.mul(r, T.narrow(q, 1, 2 * H, H))))
            h = T.add(n, T.mul(z, T.sub(h, n)))
            outs[t] = h
        return outs, h


class ElmanCell(_Cell):
    gates = ("h",)

    def __init__(self, input_size: int, hidden_size: int):
        # one recurrence; names follow W_ih / W_hh
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.W_ih = _param(hidden_size, input_size)
        self.W_hh = _param(hidden_size, hidden_size)
        self.b_ih = _param(hidden_size)
        self.b_hh = _param(hidden_size)

    def reset_parameters(self, rng: Rng) -> None:
        _uniform_fill(self.W_ih, self.input_size, rng.child("W_ih"))
        _uniform_fill(self.W_hh, self.hidden_size, rng.child("W_hh"))
        self.b_ih.data = np.zeros(self.hidden_size)
        self.b_hh.data = np.zeros(self.hidden_size)

    def run(self, x, reverse=False):
        B, L, F = x.shape
        H = self.hidden_size
        P = T.reshape(T.add(T.matmul(T.reshape(x, (B * L, F)), T.transpose(self.W_ih)), self.b_ih), (B, L, H))
        WhT = T.transpose(self.W_hh)
        h = Tensor(np.zeros((B, H)))
        outs: list[Tensor | None] = [None] * L
        for t in (range(L - 1, -1, -1) if reverse else range(L)):
            h = T.tanh(T.add(T.add(T.take(P, t, axis=1), T.matmul(h, WhT)), self.b_hh))
            outs[t] = h
        return outs, h


class _Recurrent(Module):
    cell_cls: type[_Cell] = _Cell

    def __init__(self, input_size: int, hidden_size: int, num_layers: int = 1, bidirectional: bool = False):
        if num_layers not in (1, 2, 3):
            raise ValueError(f"num_layers must be 1, 2 or 3, got {num_layers}")
        if input_size < 1 or hidden_size < 1:
            raise ValueError("input and hidden sizes must be >= 1")
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        self.bidirectional = bidirectional
        dirs = 2 if bidirectional else 1
        self.cells = []
        for layer in range(num_layers):
            f = input_size if layer == 0 else hidden_size * dirs
            for _ in range(dirs):
                self.cells.append(self.cell_cls(f, hidden_size))

    @property
    def output_size(self) -> int:
        return self.hidden_size * (2 if self.bidirectional else 1)

    def __call__(self, x: Tensor, return_sequence: bool = False) -> Tensor:
        if x.ndim != 3:
            raise ShapeError(f"recurrent input must be (B, T, F), got {x.shape}")
        if x.shape[1] == 0:
            raise ShapeError("recurrent input needs at least one time step")
        if x.shape[2] != self.input_size:
            raise ShapeError(f"expected feature size {self.input_size}, got {x.shape}")
        dirs = 2 if self.bidirectional else 1
        seq = x
        finals: list[Tensor] = []
        for layer in range(self.num_layers):
            outs, finals = [], []
            for d in range(dirs):
                o, h = self.cells[layer * dirs + d].run(seq, reverse=d == 1)
                outs.append(T.stack(o, axis=1))
                finals.append(h)
            seq = outs[0] if dirs == 1 else T.concat(outs, axis=2)
        if return_sequence:
            return seq
        return finals[0] if dirs == 1 else T.concat(finals, axis=1)


class LSTM(_Recurrent):
    cell_cls = LSTMCell


class GRU(_Recurrent):
    cell_cls = GRUCell


class Elman(_Recurrent):
    cell_cls = ElmanCell


def make_recurrent(kind: str, input_size: int, hidden_size: int, num_layers: int = 1, bidirectional: bool = False):
    classes = {"lstm": LSTM, "gru": GRU, "elman": Elman}
    if kind not in classes:
        raise ValueError(f"unknown recurrent kind {kind!r}")
    return classes[kind](input_size, hidden_size, num_layers, bidirectional)


# ---------------------------------------------------------------------------
# single steps with per-gate matrices, written gate by gate


def _gate(x, h, W_i, b_i, W_h, b_h):
    return T.add(T.add(T.matmul(x, T.transpose(W_i)), b_i), T.add(T.matmul(h, T.transpose(W_h)), b_h))


def lstm_step(x_t: Tensor, h_prev: Tensor, c_prev: Tensor, cell: LSTMCell) -> tuple[Tensor, Tensor]:
    H = cell.hidden_size
    if x_t.ndim != 2 or x_t.shape[1] != cell.input_size:
        raise ShapeError(f"x_t must be (B, {cell.input_size}), got {x_t.shape}")
    if h_prev.shape != (x_t.shape[0], H) or c_prev.shape != (x_t.shape[0], H):
        raise ShapeError(f"states must be (B, {H}), got {h_prev.shape} and {c_prev.shape}")
    pre = {g: _gate(x_t, h_prev, getattr(cell, f"W_i{g}"), getattr(cell, f"b_i{g}"),
                    getattr(cell, f"W_h{g}"), getattr(cell, f"b_h{g}")) for g in _LSTM_GATES}
    i, f, o = T.sigmoid(pre["i"]), T.sigmoid(pre["f"]), T.sigmoid(pre["o"])
    g = T.tanh(pre["g"])
    c = T.add(T.mul(f, c_prev), T.mul(i, g))
    return T.mul(o, T.tanh(c)), c


def gru_step(x_t: Tensor, h_prev: Tensor, cell: GRUCell) -> Tensor:
    r = T.sigmoid(_gate(x_t, h_prev, cell.W_ir, cell.b_ir, cell.W_hr, cell.b_hr))
    z = T.sigmoid(_gate(x_t, h_prev, cell.W_iz, cell.b_iz, cell.W_hz, cell.b_hz))
    hn = T.add(T.matmul(h_prev, T.transpose(cell.W_hn)), cell.b_hn)
    n = T.tanh(T.add(T.add(T.matmul(x_t, T.transpose(cell.W_in)), cell.b_in), T.mul(r, hn)))
    return T.add(T.mul(T.sub(1.0, z), n), T.mul(z, h_prev))


def elman_step(x_t: Tensor, h_prev: Tensor, cell: ElmanCell) -> Tensor:
    return T.tanh(_gate(x_t, h_prev, cell.W_ih, cell.b_ih, cell.W_hh, cell.b_hh))


# ---------------------------------------------------------------------------
# dropout


@dataclass(frozen=True)
class DropoutSpec:
    p: float = 0.1
    mode: str = "train"

    def __post_init__(self):
        if not 0.0 <= self.p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {self.p}")
        if self.mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {self.mode!r}")


def dropout(x: Tensor, spec: DropoutSpec, rng: Rng | None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p) at train time."""
    if spec.mode == "eval" or spec.p == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs an Rng")
    keep = (rng.random(x.shape) >= spec.p) / (1.0 - spec.p)
    return T.mul(x, keep)
