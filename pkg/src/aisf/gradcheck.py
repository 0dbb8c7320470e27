"""Finite-difference gradient checks for primitives, layers and models.

Each case builds a small random problem: a set of leaf tensors and a forward
closure over them. The scalar objective is ``sum(out * G)`` for a fixed random
``G``, so every output element contributes. Gradients from the tape (and,
where one exists, from the hand-written numpy backward in :mod:`aisf.analytic`)
are compared against central differences on a random subset of coordinates.

Error per coordinate is ``|a - n| / max(1, |a|)``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import analytic as A
from . import tensor as T
from .layers import (
    Conv1d,
    DropoutSpec,
    ElmanCell,
    GRUCell,
    Linear,
    LSTMCell,
    dropout,
    elman_step,
    gru_step,
    init_params,
    lstm_step,
    make_recurrent,
)
from .models import FCCNN, BlockConfig, FeedForward, RecurrentBaseline, build_model
from .tensor import GradTape, Rng, Tensor

LAYER_TOL = 1e-5
COMPOSITE_TOL = 1e-4
STEP = 1e-6


@dataclass
class Problem:
    leaves: dict[str, Tensor]
    forward: Callable[[], Tensor]
    # returns (output, backward) computed from the current leaf data
    analytic: Callable[[], tuple[np.ndarray, Callable]] | None = None


@dataclass(frozen=True)
class Case:
    name: str
    group: str
    build: Callable[[Rng], Problem]
    tol: float = LAYER_TOL
    coords: int = 24


@dataclass
class Row:
    name: str
    group: str
    route: str
    max_err: float
    tol: float
    trials: int
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_err)) and self.max_err < self.tol


def rel_err(a, n) -> np.ndarray:
    a, n = np.asarray(a, dtype=np.float64), np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum(1.0, np.abs(a))


def _leaf(arr) -> Tensor:
    return Tensor(arr, requires_grad=True)


def _tape_grads(p: Problem, G: np.ndarray) -> dict[str, np.ndarray]:
    with GradTape() as tape:
        out = p.forward()
        loss = T.sum_all(T.mul(out, Tensor(G)))
    grads = tape.backward(loss)
    return {k: grads.get(t, np.zeros(t.shape)) for k, t in p.leaves.items()}


def _objective(p: Problem, G: np.ndarray) -> float:
    return float(np.sum(p.forward().data * G))


def _pick_coords(p: Problem, budget: int, rng: Rng) -> list[tuple[str, int]]:
    names = list(p.leaves)
    # every leaf at least once, the rest of the budget spread at random
    picks = [(k, int(rng.integers(0, p.leaves[k].size - 1))) for k in names]
    for _ in range(max(0, budget - len(picks))):
        k = names[int(rng.integers(0, len(names) - 1))]
        picks.append((k, int(rng.integers(0, p.leaves[k].size - 1))))
    return picks


def _numeric(p: Problem, G: np.ndarray, coords) -> dict[tuple[str, int], float]:
    out = {}
    for k, i in coords:
        t = p.leaves[k]
        base = t.data.copy()
        flat = base.reshape(-1)
        x0 = flat[i]
        flat[i] = x0 + STEP
        t.data = base
        fp = _objective(p, G)
        flat[i] = x0 - STEP
        t.data = base
        fm = _objective(p, G)
        flat[i] = x0
        t.data = base
        out[(k, i)] = (fp - fm) / (2 * STEP)
    return out


def check_problem(p: Problem, rng: Rng, coords: int = 24) -> dict[str, float]:
    """Max relative error per route for one random problem."""
    out0 = p.forward().data
    G = rng.normal(0.0, 1.0, out0.shape)
    tape = _tape_grads(p, G)
    picks = _pick_coords(p, coords, rng)
    num = _numeric(p, G, picks)
    errs = {"tape": max(float(rel_err(tape[k].reshape(-1)[i], v)) for (k, i), v in num.items())}
    if p.analytic is not None:
        y, back = p.analytic()
        grads = back(G)
        e = max(float(rel_err(grads[k].reshape(-1)[i], v)) for (k, i), v in num.items())
        # forward agreement and full tape/analytic agreement on every coordinate
        e = max(e, float(np.max(rel_err(y, out0))))
        e = max(e, max(float(np.max(rel_err(grads[k], tape[k]))) for k in p.leaves))
        errs["analytic"] = e
    return errs


def run_case(case: Case, trials: int = 100, seed: int = 0) -> list[Row]:
    start = time.perf_counter()
    worst: dict[str, float] = {}
    root = Rng(seed).child(case.name)
    for t in range(trials):
        r = root.child(t)
        p = case.build(r.child("problem"))
        for route, e in check_problem(p, r.child("check"), case.coords).items():
            worst[route] = max(worst.get(route, 0.0), e if np.isfinite(e) else np.inf)
    dt = time.perf_counter() - start
    return [Row(case.name, case.group, route, e, case.tol, trials, dt) for route, e in worst.items()]


# ---------------------------------------------------------------------------
# problem builders


def _dim(rng: Rng, lo: int = 1, hi: int = 8) -> int:
    return int(rng.integers(lo, hi))


def _away_from(x: np.ndarray, points, gap: float = 1e-2) -> np.ndarray:
    """Push values at least ``gap`` away from each kink location."""
    for c in np.atleast_1d(points):
        near = np.abs(x - c) < gap
        x = np.where(near, c + np.where(x >= c, gap, -gap), x)
    return x


def _unary(fn, kink=None):
    def build(rng):
        shape = (_dim(rng), _dim(rng))
        x = rng.normal(0.0, 1.5, shape)
        if kink is not None:
            x = _away_from(x, kink)
        a = _leaf(x)
        return Problem({"a": a}, lambda: fn(a))

    return build


def _binary(fn):
    def build(rng):
        p, q = _dim(rng), _dim(rng)
        # exercise broadcasting of a row vector on one side
        sa, sb = [((p, q), (p, q)), ((p, q), (1, q)), ((1, q), (p, q)), ((p, q), (q,))][_dim(rng, 0, 3)]
        a, b = _leaf(rng.normal(0, 1, sa)), _leaf(rng.normal(0, 1, sb))
        return Problem({"a": a, "b": b}, lambda: fn(a, b))

    return build


def _b_matmul(rng):
    p, q, r = _dim(rng), _dim(rng), _dim(rng)
    a, b = _leaf(rng.normal(0, 1, (p, q))), _leaf(rng.normal(0, 1, (q, r)))
    return Problem({"a": a, "b": b}, lambda: T.matmul(a, b))


def _b_crosscorr(rng):
    B, cin, cout, L = _dim(rng, 1, 3), _dim(rng, 1, 4), _dim(rng, 1, 4), _dim(rng)
    k = (1, 3, 5)[_dim(rng, 0, 2)]
    x = _leaf(rng.normal(0, 1, (B, cin, L)))
    w = _leaf(rng.normal(0, 1, (cout, cin, k)))
    b = _leaf(rng.normal(0, 1, (cout,)))
    return Problem({"input": x, "W": w, "b": b}, lambda: T.crosscorr1d(x, w, b))


def _b_clamp(rng):
    shape = (_dim(rng), _dim(rng))
    x = _away_from(rng.normal(0, 2, shape), [-1.0, 1.0])
    a = _leaf(x)
    return Problem({"a": a}, lambda: T.clamp(a, -1.0, 1.0))


def _b_shape(kind):
    def build(rng):
        shape = (_dim(rng, 1, 4), _dim(rng, 1, 4), _dim(rng, 1, 4))
        a = _leaf(rng.normal(0, 1, shape))
        axis = _dim(rng, 0, 2)
        if kind == "reshape":
            fn = lambda: T.reshape(a, (shape[0], -1))
        elif kind == "permute":
            axes = tuple(int(i) for i in rng.permutation(3))
            fn = lambda: T.permute(a, axes)
        elif kind == "transpose":
            a = _leaf(rng.normal(0, 1, shape[:2]))
            fn = lambda: T.transpose(a)
        elif kind == "take":
            idx = _dim(rng, 0, shape[axis] - 1)
            fn = lambda: T.take(a, idx, axis)
        elif kind == "narrow":
            start = _dim(rng, 0, shape[axis] - 1)
            length = _dim(rng, 1, shape[axis] - start)
            fn = lambda: T.narrow(a, axis, start, length)
        elif kind == "concat":
            other = list(shape)
            other[axis] = _dim(rng, 1, 4)
            b = _leaf(rng.normal(0, 1, tuple(other)))
            return Problem({"a": a, "b": b}, lambda: T.concat([a, b], axis))
        elif kind == "stack":
            b = _leaf(rng.normal(0, 1, shape))
            return Problem({"a": a, "b": b}, lambda: T.stack([a, b], axis))
        elif kind == "sum_all":
            fn = lambda: T.sum_all(a)
        else:
            fn = lambda: T.mean_all(a)
        return Problem({"a": a}, fn)

    return build


def _module_leaves(mod, x: Tensor | None = None) -> dict[str, Tensor]:
    leaves = {} if x is None else {"input": x}
    leaves.update(dict(mod.named_parameters()))
    return leaves


def _params_numpy(mod) -> dict[str, np.ndarray]:
    return {k: v.data for k, v in mod.named_parameters()}


def _init_random(mod, rng: Rng):
    init_params(mod, rng)
    # nonzero biases so their gradients are exercised
    for name, p in mod.named_parameters():
        if name.split(".")[-1].startswith("b"):
            p.data = rng.child(name).normal(0.0, 0.3, p.shape)
    return mod


def _b_linear(rng):
    F, O = _dim(rng), _dim(rng)
    lead = (_dim(rng, 1, 4),) if _dim(rng, 0, 1) else (_dim(rng, 1, 3), _dim(rng, 1, 4))
    mod = _init_random(Linear(F, O), rng.child("init"))
    x = _leaf(rng.normal(0, 1, lead + (F,)))
    return Problem(_module_leaves(mod, x), lambda: mod(x),
                   lambda: A.linear_analytic(x.data, _params_numpy(mod)))


def _b_conv(rng):
    B, cin, cout, L = _dim(rng, 1, 4), _dim(rng, 1, 6), _dim(rng, 1, 6), _dim(rng)
    k = (1, 3, 5)[_dim(rng, 0, 2)]
    mod = _init_random(Conv1d(cin, cout, k), rng.child("init"))
    x = _leaf(rng.normal(0, 1, (B, cin, L)))
    return Problem(_module_leaves(mod, x), lambda: mod(x),
                   lambda: A.conv1d_analytic(x.data, _params_numpy(mod)))


def _b_relu_layer(rng):
    shape = (_dim(rng), _dim(rng))
    x = _leaf(_away_from(rng.normal(0, 1, shape), 0.0))
    return Problem({"input": x}, lambda: T.relu(x), lambda: A.relu_analytic(x.data))


def _b_dropout(rng):
    shape = (_dim(rng), _dim(rng))
    x = _leaf(rng.normal(0, 1, shape))
    spec = DropoutSpec(float(rng.uniform(0.05, 0.5)), "train")
    seed = rng.child("mask")
    # a fresh stream per call keeps the mask fixed across perturbations
    return Problem({"input": x}, lambda: dropout(x, spec, Rng(seed.seed, seed.key)))


def _b_recurrent(kind: str, max_layers: int = 2):
    def build(rng):
        B, L, F, H = _dim(rng, 1, 4), _dim(rng, 1, 6), _dim(rng, 1, 6), _dim(rng, 1, 5)
        layers = _dim(rng, 1, max_layers)
        bidir = bool(_dim(rng, 0, 1))
        seq = bool(_dim(rng, 0, 1))
        mod = _init_random(make_recurrent(kind, F, H, layers, bidir), rng.child("init"))
        x = _leaf(rng.normal(0, 1, (B, L, F)))
        return Problem(
            _module_leaves(mod, x),
            lambda: mod(x, return_sequence=seq),
            lambda: A.recurrent_analytic(kind, x.data, _params_numpy(mod), layers, bidir, seq),
        )

    return build


def _b_step(kind: str):
    cls = {"lstm": LSTMCell, "gru": GRUCell, "elman": ElmanCell}[kind]

    def build(rng):
        B, F, H = _dim(rng), _dim(rng), _dim(rng)
        cell = _init_random(cls(F, H), rng.child("init"))
        x = _leaf(rng.normal(0, 1, (B, F)))
        h = _leaf(rng.normal(0, 0.5, (B, H)))
        leaves = {"input": x, "h_prev": h}
        if kind == "lstm":
            c = _leaf(rng.normal(0, 0.5, (B, H)))
            leaves["c_prev"] = c

            def fn():
                h2, c2 = lstm_step(x, h, c, cell)
                return T.concat([h2, c2], axis=1)
        elif kind == "gru":
            fn = lambda: gru_step(x, h, cell)
        else:
            fn = lambda: elman_step(x, h, cell)
        leaves.update(dict(cell.named_parameters()))
        return Problem(leaves, fn)

    return build


def _b_model(kind: str, mode: str = "eval"):
    def build(rng):
        w, s, m = _dim(rng, 2, 5), _dim(rng, 1, 3), _dim(rng, 1, 5)
        B = _dim(rng, 1, 3)
        if kind == "proposed":
            w, s, m = 4, 2, 5
            rk = ("lstm", "gru", "elman")[_dim(rng, 0, 2)]
            cfg = BlockConfig(conv_out_channels=4, hidden_size=4, rnn_kind=rk, dropout_p=0.1)
            model = build_model(kind, w, s, m, cfg, rng.child("init"))
        else:
            model = _small_baseline(kind, w, s, m, rng.child("init"))
        _init_random(model, rng.child("init"))
        x = _leaf(rng.uniform(0.0, 1.0, (B, w, m)))
        mask = rng.child("dropout")
        if mode == "train":
            fn = lambda: model(x, "train", Rng(mask.seed, mask.key))
        else:
            fn = lambda: model(x, "eval")
        return Problem(_module_leaves(model, x), fn)

    return build


def _small_baseline(kind, w, s, m, rng):
    if kind == "feed_forward":
        mod = FeedForward(w, s, m, hidden=6)
    elif kind == "fc_cnn":
        mod = FCCNN(w, s, m, channels=4)
    else:
        mod = RecurrentBaseline(w, s, m, rnn_kind=kind, hidden=4)
    return init_params(mod, rng)


def _cases() -> list[Case]:
    out = [
        Case("matmul", "primitive", _b_matmul),
        Case("crosscorr1d", "primitive", _b_crosscorr),
        Case("add", "primitive", _binary(T.add)),
        Case("sub", "primitive", _binary(T.sub)),
        Case("mul", "primitive", _binary(T.mul)),
        Case("scale", "primitive", _unary(lambda a: T.scale(a, -2.5))),
        Case("tanh", "primitive", _unary(T.tanh)),
        Case("sigmoid", "primitive", _unary(T.sigmoid)),
        Case("relu", "primitive", _unary(T.relu, kink=0.0)),
        Case("clamp", "primitive", _b_clamp),
    ]
    for k in ("reshape", "permute", "transpose", "take", "narrow", "concat", "stack", "sum_all", "mean_all"):
        out.append(Case(k, "primitive", _b_shape(k)))
    out += [
        Case("linear", "linear", _b_linear),
        Case("conv1d", "conv1d", _b_conv),
        Case("relu_layer", "relu", _b_relu_layer),
        Case("dropout", "dropout", _b_dropout),
    ]
    for kind in ("lstm", "gru", "elman"):
        out.append(Case(f"{kind}_step", kind, _b_step(kind)))
        out.append(Case(kind, kind, _b_recurrent(kind), coords=16))
    for kind in ("feed_forward", "fc_cnn", "lstm", "gru", "elman"):
        out.append(Case(f"baseline_{kind}", "baseline", _b_model(kind), coords=16))
    out += [
        Case("proposed", "proposed", _b_model("proposed"), tol=COMPOSITE_TOL, coords=16),
        Case("proposed_train", "proposed", _b_model("proposed", "train"), tol=COMPOSITE_TOL, coords=16),
    ]
    return out


CASES: list[Case] = _cases()


def select(layer: str | None = None, cases: list[Case] | None = None) -> list[Case]:
    """Cases whose group or name matches ``layer`` (all when None)."""
    cases = CASES if cases is None else cases
    if layer is None:
        return list(cases)
    key = layer.lower()
    return [c for c in cases if c.group == key or c.name == key or c.name.startswith(key + "_")]


def run_suite(layer: str | None = None, trials: int = 100, seed: int = 0,
              cases: list[Case] | None = None) -> list[Row]:
    rows: list[Row] = []
    for case in select(layer, cases):
        rows.extend(run_case(case, trials, seed))
    return rows


def format_table(rows: list[Row]) -> str:
    lines = [f"{'case':<22}{'route':<10}{'max_rel_err':>13}{'tol':>9}  {'result':<6}{'sec':>7}"]
    for r in rows:
        lines.append(
            f"{r.name:<22}{r.route:<10}{r.max_err:>13.3e}{r.tol:>9.0e}  {'PASS' if r.passed else 'FAIL':<6}{r.seconds:>7.2f}"
        )
    return "\n".join(lines)
