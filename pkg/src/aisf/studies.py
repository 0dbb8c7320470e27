"""Experiment studies shared by the runner scripts and the acceptance suite."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data import M, REGIMES, GeneratorConfig, TrajectoryNetwork, generate_synthetic
from .experiment import RunSpec, prepare, run
from .fixtures import weaving_fleet
from .models import build_model
from .tensor import Rng
from .training import SEEDS, TrainConfig, train


@dataclass
class OverfitRow:
    regime: str
    control_hte: float
    proposed_hte: float
    best_epoch: int
    seconds: float

    @property
    def ratio(self) -> float:
        return self.proposed_hte / self.control_hte


def overfit(regime: str, epochs: int = 200, seed: int = 2021,
            network: TrajectoryNetwork | None = None) -> OverfitRow:
    """Training HTE of the default proposed net against the control model."""
    net = weaving_fleet(seed) if network is None else network
    w, s = REGIMES[regime]
    data = prepare(net, w, s, seed)
    ctrl = train(build_model("control", w, s, M), data.train, data.test, data.scaler, TrainConfig(seed=seed))
    start = time.perf_counter()
    res, _ = run(net, RunSpec.for_regime(regime, train=TrainConfig(max_epochs=epochs, seed=seed)))
    # judged on the restored (best test epoch) parameters, not the best training epoch
    return OverfitRow(regime, ctrl.train_report.hte, res.train_report.hte, res.best_epoch,
                      time.perf_counter() - start)


ORDERING_DATA = GeneratorConfig(n_vessels=200, outlier_rate=0.05)


@dataclass
class OrderingResult:
    regime: str
    rows: list[dict] = field(default_factory=list)

    def mean(self, model: str, key: str = "rpd") -> float:
        return float(np.mean([r[key] for r in self.rows if r["model"] == model]))


def ordering(models=("proposed", "lstm"), seeds=SEEDS, regime: str = "medium", epochs: int = 50,
             data_seed: int = 2021, log=print) -> OrderingResult:
    """Test metrics of each model for each seed on the outlier-laden synthetic set."""
    net = generate_synthetic(ORDERING_DATA, Rng(data_seed))
    out = OrderingResult(regime)
    for seed in seeds:
        for model in models:
            start = time.perf_counter()
            res, _ = run(net, RunSpec.for_regime(regime, model=model, train=TrainConfig(max_epochs=epochs, seed=seed)))
            r = res.test_report
            row = {"model": model, "seed": seed, "rpd": r.rpd, "abs_rpd": abs(r.rpd), "hte": r.hte, "mae": r.mae,
                   "rmse": r.rmse, "best_epoch": res.best_epoch, "seconds": time.perf_counter() - start,
                   "rpd_per_variable": {k: v["rpd"] for k, v in r.per_variable.items()}}
            out.rows.append(row)
            if log:
                log(f"{model:<10} seed {seed}  rpd {r.rpd:+.5f}  hte {r.hte:.4f}  "
                    f"best epoch {res.best_epoch}  {row['seconds']:.0f}s")
    return out
