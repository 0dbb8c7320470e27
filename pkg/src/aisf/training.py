"""Loss, metrics, optimizer, scheduler and the mini-batch training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import LOWER, UPPER, VARIABLES, Scaler, WindowSample, clip_values, stack_samples
from .models import ChainModel, Forecaster
from .tensor import GradTape, Rng, ShapeError, Tensor

log = logging.getLogger(__name__)

SEEDS = (2021, 2121, 2221, 2321, 2421)


class TrainingDiverged(FloatingPointError):
    pass


# ---------------------------------------------------------------------------
# loss and metrics


def hte_loss(pred: Tensor, target) -> Tensor:
    """Mean of r * tanh(r) over all residuals r = target - pred."""
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"hte_loss: prediction {pred.shape} vs target {target.shape}")
    r = T.sub(target, pred)
    return T.mean_all(T.mul(r, T.tanh(r)))


def _pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
    return pred, target


def metric_hte(pred, target) -> float:
    pred, target = _pair(pred, target)
    r = target - pred
    return float(np.mean(r * np.tanh(r)))


def metric_mae(pred, target) -> float:
    pred, target = _pair(pred, target)
    return float(np.mean(np.abs(target - pred)))


def metric_rmse(pred, target) -> float:
    pred, target = _pair(pred, target)
    return float(np.sqrt(np.mean((target - pred) ** 2)))


def metric_huber(pred, target, delta: float = 1.0) -> float:
    pred, target = _pair(pred, target)
    a = np.abs(target - pred)
    return float(np.mean(np.where(a <= delta, 0.5 * a * a, delta * (a - 0.5 * delta))))


def rpd_terms(pred, target) -> np.ndarray:
    pred, target = _pair(pred, target)
    num = 2.0 * (target - pred)
    den = np.abs(target) + np.abs(pred)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def metric_rpd(pred, target) -> float:
    """Signed mean of 2(y - yhat) / (|y| + |yhat|); 0/0 terms count as 0."""
    return float(np.mean(rpd_terms(pred, target)))


@dataclass
class MetricReport:
    hte: float
    mae: float
    huber: float
    rmse: float
    rpd: float
    n_elements: int
    per_variable: dict[str, dict[str, float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "hte": self.hte, "mae": self.mae, "huber": self.huber, "rmse": self.rmse, "rpd": self.rpd,
            "n_elements": self.n_elements, "per_variable": self.per_variable,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(**{k: d[k] for k in ("hte", "mae", "huber", "rmse", "rpd", "n_elements")},
                   per_variable=d.get("per_variable", {}))


def _scores(pred, target) -> dict[str, float]:
    return {
        "hte": metric_hte(pred, target),
        "mae": metric_mae(pred, target),
        "huber": metric_huber(pred, target),
        "rmse": metric_rmse(pred, target),
        "rpd": metric_rpd(pred, target),
    }


def metric_report(pred: np.ndarray, target: np.ndarray, names: Sequence[str] = VARIABLES) -> MetricReport:
    """All five metrics over every element, plus a breakdown along the last axis."""
    pred, target = _pair(pred, target)
    per_var = {name: _scores(pred[..., v], target[..., v]) for v, name in enumerate(names)}
    return MetricReport(**_scores(pred, target), n_elements=int(pred.size), per_variable=per_var)


def per_step_rows(pred: np.ndarray, target: np.ndarray, names: Sequence[str] = VARIABLES) -> list[dict]:
    """Metrics per (horizon step, variable) for (N, s, m) arrays."""
    pred, target = _pair(pred, target)
    rows = []
    for v, name in enumerate(names):
        for t in range(pred.shape[1]):
            rows.append({"step": t + 1, "variable": name, **_scores(pred[:, t, v], target[:, t, v])})
    return rows


# ---------------------------------------------------------------------------
# optimization


@dataclass
class OptimState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    @classmethod
    def for_params(cls, params: Sequence[Tensor], **kw) -> "OptimState":
        return cls([np.zeros(p.shape) for p in params], [np.zeros(p.shape) for p in params], **kw)


def adamw_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: OptimState, lr: float,
               names: Sequence[str] | None = None) -> None:
    """One decoupled-weight-decay Adam update, in place."""
    for k, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            label = names[k] if names else f"#{k}"
            raise FloatingPointError(f"non-finite gradient for parameter {label}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if m.shape != p.shape:
            raise ShapeError(f"moment shape {m.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + state.eps) + state.weight_decay * p.data
        p.data = p.data - lr * update


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float = 1.0) -> tuple[list[np.ndarray], float]:
    """Scale all gradients by max_norm / g when the global L2 norm g exceeds max_norm."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm:
        f = max_norm / total
        return [g * f for g in grads], total
    return list(grads), total


@dataclass
class PlateauScheduler:
    """Multiply lr by ``factor`` after ``patience`` epochs without improvement."""

    lr: float
    patience: int = 3
    factor: float = 0.8
    threshold: float = 1e-6
    best: float = math.inf
    stalled: int = 0

    def step(self, loss: float) -> float:
        if loss < self.best - self.threshold:
            self.best = loss
            self.stalled = 0
        else:
            self.stalled += 1
            if self.stalled >= self.patience:
                self.lr *= self.factor
                self.stalled = 0
        return self.lr


def plateau_schedule(losses: Sequence[float], lr: float = 1e-3, patience: int = 3, factor: float = 0.8) -> list[float]:
    """lr after each epoch for a given loss history."""
    sch = PlateauScheduler(lr, patience, factor)
    return [sch.step(x) for x in losses]


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    lr: float = 1e-3
    grad_clip_norm: float = 1.0
    dropout_p: float = 0.1
    plateau_patience: int = 3
    lr_decay_factor: float = 0.8
    batch_size: int = 128
    max_epochs: int = 50
    seed: int = 2021

    def __post_init__(self):
        if min(self.lr, self.grad_clip_norm, self.batch_size, self.max_epochs, self.plateau_patience) <= 0:
            raise ValueError("training settings must be positive")
        if not 0.0 < self.lr_decay_factor < 1.0:
            raise ValueError("lr_decay_factor must be in (0, 1)")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")


@dataclass
class EpochRecord:
    epoch: int
    train_hte: float
    test_hte: float
    lr: float


@dataclass
class TrainResult:
    model: Forecaster
    history: list[EpochRecord]
    train_report: MetricReport
    test_report: MetricReport
    best_epoch: int


def _unscale_clip(pred: Tensor, scaler: Scaler) -> Tensor:
    gain, offset = scaler.inverse_affine()
    # straight-through: a prediction stuck outside the bounds must still be pulled back
    return T.clamp(T.add(T.mul(pred, gain), offset), LOWER, UPPER, straight_through=True)


def predict(model: Forecaster, X_scaled: np.ndarray, scaler: Scaler, batch_size: int = 512) -> np.ndarray:
    """Eval-mode forecasts in original units, clipped to physical bounds."""
    if scaler.m != model.m:
        raise ShapeError(f"scaler has {scaler.m} variables, model expects {model.m}")
    outs = []
    for i in range(0, len(X_scaled), batch_size):
        outs.append(model(Tensor(X_scaled[i : i + batch_size]), "eval").data)
    raw = scaler.inverse_transform(np.concatenate(outs))
    return clip_values(raw)


def evaluate(model: Forecaster, samples: Sequence[WindowSample], scaler: Scaler) -> MetricReport:
    X, Y = stack_samples(samples)
    if X.shape[2] != scaler.m:
        raise ShapeError(f"windows have {X.shape[2]} variables, scaler was fitted on {scaler.m}")
    return metric_report(predict(model, scaler.transform(X), scaler), Y)


def train(model: Forecaster, train_samples: Sequence[WindowSample], test_samples: Sequence[WindowSample],
          scaler: Scaler, cfg: TrainConfig) -> TrainResult:
    """Fit ``model``; for networks, return the parameters of the best test-HTE epoch."""
    if not train_samples or not test_samples:
        raise ValueError("training needs non-empty train and test windows")
    if not scaler.fitted:
        raise ValueError("scaler must be fitted before training")
    Xtr, Ytr = stack_samples(train_samples)
    Utr = scaler.transform(Xtr)

    if not model.trainable:
        if isinstance(model, ChainModel):
            model.fit(Utr, scaler.transform(Ytr))
        tr, te = evaluate(model, train_samples, scaler), evaluate(model, test_samples, scaler)
        return TrainResult(model, [EpochRecord(0, tr.hte, te.hte, 0.0)], tr, te, 0)

    named = list(model.named_parameters())
    names = [n for n, _ in named]
    params = [p for _, p in named]
    state = OptimState.for_params(params)
    sched = PlateauScheduler(cfg.lr, cfg.plateau_patience, cfg.lr_decay_factor)
    root = Rng(cfg.seed)
    order_rng = root.child("order")
    drop_rng = root.child("dropout")

    history: list[EpochRecord] = []
    best = (math.inf, -1, [p.data.copy() for p in params])
    N = len(Utr)
    for epoch in range(1, cfg.max_epochs + 1):
        lr = sched.lr
        perm = order_rng.permutation(N)
        for b, start in enumerate(range(0, N, cfg.batch_size)):
            idx = perm[start : start + cfg.batch_size]
            with GradTape() as tape:
                out = model(Tensor(Utr[idx]), "train", drop_rng)
                loss = hte_loss(_unscale_clip(out, scaler), Ytr[idx])
            if not math.isfinite(loss.item()):
                norms = ", ".join(f"{n}={np.linalg.norm(p.data):.3g}" for n, p in named)
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {b}; parameter norms: {norms}")
            grads = tape.backward(loss)
            g = [grads.get(p, np.zeros(p.shape)) for p in params]
            g, _ = clip_grad_norm(g, cfg.grad_clip_norm)
            adamw_step(params, g, state, lr, names)
        tr = evaluate(model, train_samples, scaler)
        te = evaluate(model, test_samples, scaler)
        history.append(EpochRecord(epoch, tr.hte, te.hte, lr))
        log.debug("epoch %d train_hte=%.6g test_hte=%.6g lr=%.3g", epoch, tr.hte, te.hte, lr)
        if te.hte < best[0]:
            best = (te.hte, epoch, [p.data.copy() for p in params])
        sched.step(te.hte)

    for p, d in zip(params, best[2]):
        p.data = d
    return TrainResult(model, history, evaluate(model, train_samples, scaler),
                       evaluate(model, test_samples, scaler), best[1])
