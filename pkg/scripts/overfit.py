"""Capacity check: the default proposed net against the control model on the weaving fleet."""

import argparse

from aisf.data import REGIMES
from aisf.studies import overfit


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--seed", type=int, default=2021)
    ap.add_argument("--regimes", nargs="+", default=list(REGIMES), choices=list(REGIMES))
    args = ap.parse_args()
    print(f"{'regime':<8}{'control':>12}{'proposed':>12}{'ratio':>8}{'best':>6}{'sec':>7}")
    for regime in args.regimes:
        r = overfit(regime, args.epochs, args.seed)
        print(f"{regime:<8}{r.control_hte:>12.5g}{r.proposed_hte:>12.5g}{r.ratio:>8.3f}{r.best_epoch:>6}{r.seconds:>7.0f}")


if __name__ == "__main__":
    main()
