"""Command line entry point: ``aisf {generate,train,evaluate,gradcheck}``.

Exit codes: 0 success, 1 a check failed, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import gradcheck
from .data import REGIMES, DataError, GeneratorConfig, generate_synthetic, write_csv
from .experiment import (
    DataSource,
    RunSpec,
    aggregate,
    load_checkpoint,
    predictions,
    prepare,
    report_dict,
    run,
    save_checkpoint,
    write_epoch_csv,
)
from .models import CHANNEL_CHOICES, KINDS, BlockConfig
from .tensor import Rng, ShapeError
from .training import SEEDS, TrainConfig, metric_report, per_step_rows

log = logging.getLogger("aisf")

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _fraction(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"expected a value in (0, 1), got {text}")
    return v


def _rate(text: str) -> float:
    v = float(text)
    if not 0.0 <= v < 1.0:
        raise argparse.ArgumentTypeError(f"expected a rate in [0, 1), got {text}")
    return v


def _seeds(text: str) -> list[int]:
    if text == "all":
        return list(SEEDS)
    try:
        return [int(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--seeds takes 'all' or a comma-separated list, got {text!r}") from None


def _add_generator_flags(p: argparse.ArgumentParser, seed_flag: str) -> None:
    p.add_argument("--vessels", type=_positive_int, default=200, help="number of synthetic vessels")
    p.add_argument("--outlier-rate", type=_rate, default=0.0, help="probability of a ΔT spike per message")
    p.add_argument(seed_flag, type=int, default=2021, dest="gen_seed", help="generator seed")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aisf", description="AIS trajectory forecasting experiments")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic AIS CSV and a generation report")
    _add_generator_flags(g, "--seed")
    g.add_argument("--out", type=Path, required=True)

    t = sub.add_parser("train", help="train a forecaster and write checkpoint, epoch log and report")
    src = t.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", type=Path, help="CSV with vessel_id,timestamp,lat,lon,cog,sog")
    src.add_argument("--generate", action="store_true", help="generate a synthetic set in memory")
    _add_generator_flags(t, "--data-seed")
    t.add_argument("--model", choices=KINDS, default="proposed")
    t.add_argument("--regime", choices=sorted(REGIMES), default="low")
    t.add_argument("--window", type=_positive_int, help="override the regime's window w")
    t.add_argument("--horizon", type=_positive_int, help="override the regime's horizon s")
    t.add_argument("--channels", type=int, choices=CHANNEL_CHOICES, default=128)
    t.add_argument("--hidden", type=_positive_int, default=128)
    t.add_argument("--layers", type=int, choices=(1, 2, 3), default=1)
    t.add_argument("--bidirectional", action="store_true")
    t.add_argument("--rnn", choices=("lstm", "gru", "elman"), default="lstm", help="recurrent kind inside the proposed net")
    t.add_argument("--isolate-variables", action="store_true")
    seeds = t.add_mutually_exclusive_group()
    seeds.add_argument("--seed", type=int, default=None)
    seeds.add_argument("--seeds", type=_seeds, default=None, help="'all' for the five standard seeds, or a list")
    t.add_argument("--epochs", type=_positive_int, default=50)
    t.add_argument("--batch-size", type=_positive_int, default=128, help="windows per batch")
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--lr-decay-factor", type=_fraction, default=TrainConfig.lr_decay_factor)
    t.add_argument("--dropout", type=_rate, default=0.1)
    t.add_argument("--test-fraction", type=_fraction, default=0.2)
    t.add_argument("--out", type=Path, required=True)

    e = sub.add_parser("evaluate", help="score a checkpoint on held-out windows")
    e.add_argument("--checkpoint", type=Path, required=True)
    esrc = e.add_mutually_exclusive_group()
    esrc.add_argument("--data", type=Path, help="score on this CSV instead of the training source")
    esrc.add_argument("--generate", action="store_true", help="score on a freshly generated set")
    _add_generator_flags(e, "--data-seed")
    e.add_argument("--regime", choices=sorted(REGIMES))
    e.add_argument("--window", type=_positive_int)
    e.add_argument("--horizon", type=_positive_int)
    e.add_argument("--split", choices=("test", "train"), default="test")
    e.add_argument("--per-step", action="store_true", help="also write per-horizon-step metrics CSV")
    e.add_argument("--out", type=Path, required=True)

    c = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    c.add_argument("--layer", help="only rows for this layer or group (e.g. lstm, conv1d, proposed)")
    c.add_argument("--trials", type=_positive_int, default=100)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", type=Path, help="also write the table as CSV here")
    return ap


# ---------------------------------------------------------------------------
# generate


def generation_report(net) -> dict:
    lengths = np.array([len(t) for t in net], dtype=np.float64)
    dts = np.concatenate([t.delta_t[1:] for t in net])
    mu, sd = lengths.mean(), lengths.std()
    skew = float(np.mean(((lengths - mu) / sd) ** 3)) if sd > 0 else 0.0
    q = np.quantile(dts, [0.5, 0.9, 0.99]) if dts.size else np.zeros(3)
    top = np.sort(lengths)[::-1]
    return {
        "vessels": int(net.c),
        "messages": int(net.n_messages),
        "length": {"min": int(lengths.min()), "median": float(np.median(lengths)), "mean": float(mu),
                   "max": int(lengths.max()), "skewness": skew,
                   "top10pct_share": float(top[: max(1, len(top) // 10)].sum() / lengths.sum())},
        "delta_t": {"p50": float(q[0]), "p90": float(q[1]), "p99": float(q[2]),
                    "max": float(dts.max()) if dts.size else 0.0,
                    "max_over_median": float(dts.max() / q[0]) if dts.size and q[0] > 0 else 0.0},
    }


def cmd_generate(args) -> int:
    cfg = GeneratorConfig(n_vessels=args.vessels, outlier_rate=args.outlier_rate)
    net = generate_synthetic(cfg, Rng(args.gen_seed))
    args.out.mkdir(parents=True, exist_ok=True)
    write_csv(net, args.out / "ais.csv")
    rep = {"seed": args.gen_seed, "outlier_rate": args.outlier_rate, **generation_report(net)}
    (args.out / "generation_report.json").write_text(json.dumps(rep, indent=2) + "\n", encoding="utf-8")
    L, D = rep["length"], rep["delta_t"]
    print(f"wrote {rep['messages']} messages for {rep['vessels']} vessels to {args.out / 'ais.csv'}")
    print(f"messages per vessel: min {L['min']} median {L['median']:.0f} max {L['max']} skewness {L['skewness']:.2f}")
    print(f"ΔT seconds: p50 {D['p50']:.0f} p90 {D['p90']:.0f} p99 {D['p99']:.0f} max {D['max']:.0f} "
          f"(max/median {D['max_over_median']:.1f})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _source(args) -> DataSource:
    if args.data is not None:
        if not args.data.exists():
            raise UsageError(f"data file {args.data} does not exist")
        return DataSource(path=str(args.data))
    return DataSource(generator=GeneratorConfig(n_vessels=args.vessels, outlier_rate=args.outlier_rate),
                      generator_seed=args.gen_seed)


def _regime(args, default: tuple[int, int]) -> tuple[int, int]:
    w, s = REGIMES[args.regime] if args.regime else default
    return args.window or w, args.horizon or s


def _spec(args, seed: int) -> RunSpec:
    w, s = _regime(args, REGIMES["low"])
    block = BlockConfig(conv_out_channels=args.channels, hidden_size=args.hidden, rnn_kind=args.rnn,
                        num_layers=args.layers, bidirectional=args.bidirectional, dropout_p=args.dropout,
                        isolate_variables=args.isolate_variables)
    cfg = TrainConfig(lr=args.lr, dropout_p=args.dropout, lr_decay_factor=args.lr_decay_factor,
                      batch_size=args.batch_size, max_epochs=args.epochs, seed=seed)
    return RunSpec(model=args.model, w=w, s=s, block=block, train=cfg, test_fraction=args.test_fraction)


def train_one(source: DataSource, spec: RunSpec, out: Path) -> dict:
    """One seed: train, then write checkpoint (parametric kinds), epoch CSV and report."""
    out.mkdir(parents=True, exist_ok=True)
    result, data = run(source.load(), spec)
    if spec.model != "control":
        save_checkpoint(out / "checkpoint.json", result.model, spec, data.scaler, source)
    write_epoch_csv(result.history, out / "epochs.csv")
    rep = report_dict(result.test_report, spec, "test", best_epoch=result.best_epoch,
                      n_train_windows=len(data.train), n_test_windows=len(data.test),
                      test_fraction=spec.test_fraction, train=result.train_report.to_dict())
    (out / "report.json").write_text(json.dumps(rep, indent=2) + "\n", encoding="utf-8")
    return rep


def _workers(n_jobs: int) -> int:
    cap = os.environ.get("AISF_THREADS")
    limit = os.cpu_count() or 1
    if cap:
        try:
            limit = max(1, int(cap))
        except ValueError:
            raise UsageError(f"AISF_THREADS must be an integer, got {cap!r}") from None
    return max(1, min(n_jobs, limit))


def cmd_train(args) -> int:
    source = _source(args)
    seeds = args.seeds or [args.seed if args.seed is not None else SEEDS[0]]
    specs = [_spec(args, sd) for sd in seeds]
    # fail fast on data that cannot supply a single window
    net = source.load()
    prepare(net, specs[0].w, specs[0].s, specs[0].seed, specs[0].test_fraction)
    args.out.mkdir(parents=True, exist_ok=True)

    if len(specs) == 1:
        rep = train_one(source, specs[0], args.out)
        _print_report(rep)
        return EXIT_OK

    dirs = [args.out / f"seed_{sp.seed}" for sp in specs]
    n = _workers(len(specs))
    if n == 1:
        reps = [train_one(source, sp, d) for sp, d in zip(specs, dirs)]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            reps = list(pool.map(train_one, [source] * len(specs), specs, dirs))
    agg = aggregate(reps)
    summary = {"model": specs[0].model, "w": specs[0].w, "s": specs[0].s, "seeds": seeds,
               "aggregate": agg, "runs": reps}
    (args.out / "report.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    for sp, rep in zip(specs, reps):
        print(f"seed {sp.seed}: test hte {rep['hte']:.6g} rpd {rep['rpd']:.6g}")
    for k in ("hte", "mae", "huber", "rmse", "rpd"):
        print(f"{k:>6}: {agg[k]['mean']:.6g} ± {agg[k]['std']:.3g}")
    return EXIT_OK


def _print_report(rep: dict) -> None:
    print(f"{rep['model']} w={rep['w']} s={rep['s']} seed={rep['seed']} ({rep['split']} split, {rep['n_elements']} values)")
    print("  " + "  ".join(f"{k} {rep[k]:.6g}" for k in ("hte", "mae", "huber", "rmse", "rpd")))


# ---------------------------------------------------------------------------
# evaluate


def cmd_evaluate(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    spec = ck.spec
    source = ck.source if args.data is None and not args.generate else _source(args)
    w, s = _regime(args, (spec.w, spec.s))
    data = prepare(source.load(), w, s, spec.seed, spec.test_fraction, spec.windows_per_vessel)
    samples = data.test if args.split == "test" else data.train
    if (w, s) != (spec.w, spec.s):
        raise ShapeError(f"checkpoint was trained for window {spec.w} / horizon {spec.s}, "
                         f"dataset windows are {w} / {s}")
    pred, target = predictions(ck.model, samples, ck.scaler)
    rep = report_dict(metric_report(pred, target), spec, args.split, checkpoint=str(args.checkpoint))
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "evaluation.json").write_text(json.dumps(rep, indent=2) + "\n", encoding="utf-8")
    if args.per_step:
        rows = per_step_rows(pred, target)
        with open(args.out / "per_step.csv", "w", newline="", encoding="utf-8") as fh:
            wr = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            wr.writeheader()
            wr.writerows(rows)
    _print_report(rep)
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(args) -> int:
    if not gradcheck.select(args.layer):
        raise UsageError(f"no gradient check matches --layer {args.layer!r}")
    rows = gradcheck.run_suite(args.layer, trials=args.trials, seed=args.seed)
    print(gradcheck.format_table(rows))
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        with open(args.out / "gradcheck.csv", "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["case", "group", "route", "max_rel_err", "tol", "trials", "result"])
            for r in rows:
                wr.writerow([r.name, r.group, r.route, repr(r.max_err), r.tol, r.trials, "PASS" if r.passed else "FAIL"])
    failed = [r for r in rows if not r.passed]
    print(f"{len(rows) - len(failed)}/{len(rows)} rows pass")
    return EXIT_CHECK if failed else EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate, "gradcheck": cmd_gradcheck}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, DataError, ShapeError, ValueError) as exc:
        print(f"aisf {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
