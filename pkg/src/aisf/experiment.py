"""Run specification, data preparation, single runs and checkpoint IO.

Random streams for one run all derive from its seed:
``windows`` (window start sampling), ``split`` (train/test assignment),
``init`` (parameter initialisation), and inside :func:`training.train`
``order`` and ``dropout``.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .data import (
    M,
    REGIMES,
    VARIABLES,
    DataError,
    GeneratorConfig,
    Scaler,
    TrajectoryNetwork,
    WindowSample,
    build_windows,
    fit_scaler,
    generate_synthetic,
    load_csv,
    split_train_test,
    stack_samples,
)
from .models import KINDS, BlockConfig, ChainModel, Forecaster, build_model
from .tensor import Rng
from .training import EpochRecord, MetricReport, TrainConfig, TrainResult, predict, train

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "aisf-checkpoint/1"
WINDOWS_PER_VESSEL = 25


class TooShortError(DataError):
    """No trajectory is long enough for the requested window and horizon."""


@dataclass
class DataSource:
    """Exactly one of a CSV path or a generator configuration."""

    path: str | None = None
    generator: GeneratorConfig | None = None
    generator_seed: int = 2021

    def __post_init__(self):
        if (self.path is None) == (self.generator is None):
            raise ValueError("a run needs exactly one data source: a CSV path or a generator config")

    def load(self) -> TrajectoryNetwork:
        if self.path is not None:
            return load_csv(self.path)
        return generate_synthetic(self.generator, Rng(self.generator_seed))

    def to_dict(self) -> dict:
        if self.path is not None:
            return {"path": str(self.path)}
        return {"generator": asdict(self.generator), "generator_seed": self.generator_seed}

    @classmethod
    def from_dict(cls, d: dict) -> "DataSource":
        if "path" in d:
            return cls(path=d["path"])
        g = {k: tuple(v) if isinstance(v, list) else v for k, v in d["generator"].items()}
        return cls(generator=GeneratorConfig(**g), generator_seed=int(d["generator_seed"]))


@dataclass
class RunSpec:
    model: str = "proposed"
    w: int = 15
    s: int = 5
    block: BlockConfig = field(default_factory=BlockConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    test_fraction: float = 0.2
    windows_per_vessel: int = WINDOWS_PER_VESSEL

    def __post_init__(self):
        if self.model not in KINDS:
            raise ValueError(f"unknown model kind {self.model!r}; choose from {', '.join(KINDS)}")
        if self.w < 1 or self.s < 1:
            raise ValueError("window and horizon must be positive")

    @classmethod
    def for_regime(cls, regime: str, **kw) -> "RunSpec":
        if regime not in REGIMES:
            raise ValueError(f"unknown regime {regime!r}; choose from {', '.join(REGIMES)}")
        w, s = REGIMES[regime]
        return cls(w=w, s=s, **kw)

    @property
    def seed(self) -> int:
        return self.train.seed


@dataclass
class Prepared:
    train: list[WindowSample]
    test: list[WindowSample]
    scaler: Scaler


def prepare(network: TrajectoryNetwork, w: int, s: int, seed: int, test_fraction: float = 0.2,
            count: int = WINDOWS_PER_VESSEL) -> Prepared:
    """Window, split and fit the scaler on the training side only."""
    longest = max((len(t) for t in network), default=0)
    if longest < w + s:
        raise TooShortError(
            f"no trajectory has the {w + s} messages needed for window {w} + horizon {s} "
            f"(longest has {longest}); use a smaller --window/--horizon or longer trajectories"
        )
    root = Rng(seed)
    samples = build_windows(network, w, s, count, root.child("windows"))
    try:
        tr, te = split_train_test(samples, test_fraction, root.child("split"))
    except ValueError as exc:
        raise TooShortError(
            f"{exc}; only {len(samples)} windows of length w + s = {w + s} exist, "
            "need trajectories with more messages or more vessels"
        ) from None
    return Prepared(tr, te, fit_scaler(tr))


def new_model(spec: RunSpec, m: int = M) -> Forecaster:
    return build_model(spec.model, spec.w, spec.s, m, spec.block, Rng(spec.seed).child("init"))


def run(network: TrajectoryNetwork, spec: RunSpec) -> tuple[TrainResult, Prepared]:
    data = prepare(network, spec.w, spec.s, spec.seed, spec.test_fraction, spec.windows_per_vessel)
    model = new_model(spec)
    return train(model, data.train, data.test, data.scaler, spec.train), data


# ---------------------------------------------------------------------------
# artifacts


def write_epoch_csv(history: list[EpochRecord], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["epoch", "train_hte", "test_hte", "lr"])
        for r in history:
            wr.writerow([r.epoch, repr(r.train_hte), repr(r.test_hte), repr(r.lr)])


def report_dict(report: MetricReport, spec: RunSpec, split: str, **extra: Any) -> dict:
    return {**report.to_dict(), "split": split, "model": spec.model, "seed": spec.seed,
            "w": spec.w, "s": spec.s, **extra}


def _model_arrays(model: Forecaster) -> list[tuple[str, np.ndarray]]:
    if isinstance(model, ChainModel):
        return model.state_arrays()
    return [(n, p.data) for n, p in model.named_parameters()]


def save_checkpoint(path: Path, model: Forecaster, spec: RunSpec, scaler: Scaler, source: DataSource) -> None:
    header = {
        "format": CHECKPOINT_FORMAT,
        "model": spec.model,
        "w": spec.w,
        "s": spec.s,
        "m": model.m,
        "block": spec.block.to_dict(),
        "train": asdict(spec.train),
        "test_fraction": spec.test_fraction,
        "windows_per_vessel": spec.windows_per_vessel,
        "seed": spec.seed,
        "scaler": scaler.to_dict(),
        "data": source.to_dict(),
    }
    params = [{"name": n, "shape": list(a.shape), "data": a.reshape(-1).tolist()} for n, a in _model_arrays(model)]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"header": header, "parameters": params}, fh)


@dataclass
class Checkpoint:
    spec: RunSpec
    model: Forecaster
    scaler: Scaler
    source: DataSource
    m: int


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, encoding="utf-8") as fh:
        blob = json.load(fh)
    head = blob.get("header", {})
    if head.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path}: unsupported checkpoint format {head.get('format')!r}, expected {CHECKPOINT_FORMAT}")
    spec = RunSpec(
        model=head["model"], w=head["w"], s=head["s"], block=BlockConfig(**head["block"]),
        train=TrainConfig(**head["train"]), test_fraction=head["test_fraction"],
        windows_per_vessel=head["windows_per_vessel"],
    )
    m = int(head["m"])
    model = build_model(spec.model, spec.w, spec.s, m, spec.block, Rng(spec.seed).child("init"))
    arrays = {p["name"]: np.asarray(p["data"], dtype=np.float64).reshape(p["shape"]) for p in blob["parameters"]}
    if isinstance(model, ChainModel):
        model.load_arrays(arrays)
    else:
        named = dict(model.named_parameters())
        if set(named) != set(arrays):
            raise DataError(f"{path}: parameter names do not match a {spec.model} model")
        for name, p in named.items():
            if tuple(arrays[name].shape) != p.shape:
                raise DataError(f"{path}: parameter {name} has shape {arrays[name].shape}, model expects {p.shape}")
            p.data = arrays[name]
    return Checkpoint(spec, model, Scaler.from_dict(head["scaler"]), DataSource.from_dict(head["data"]), m)


def predictions(model: Forecaster, samples: list[WindowSample], scaler: Scaler) -> tuple[np.ndarray, np.ndarray]:
    """Clipped original-unit forecasts and targets for ``samples``."""
    X, Y = stack_samples(samples)
    return predict(model, scaler.transform(X), scaler), Y


def aggregate(reports: list[dict], keys=("hte", "mae", "huber", "rmse", "rpd")) -> dict:
    """Mean and sample standard deviation of each metric across runs."""
    out: dict[str, Any] = {}
    for k in keys:
        v = np.array([r[k] for r in reports], dtype=np.float64)
        out[k] = {"mean": float(v.mean()), "std": float(v.std(ddof=1)) if len(v) > 1 else 0.0}
    out["abs_rpd"] = {"mean": float(np.mean([abs(r["rpd"]) for r in reports]))}
    out["per_variable"] = {
        name: {k: float(np.mean([r["per_variable"][name][k] for r in reports])) for k in keys}
        for name in VARIABLES if all(name in r.get("per_variable", {}) for r in reports)
    }
    out["n_runs"] = len(reports)
    return out
