"""Multi-seed comparison of test metrics on the 200-vessel set with ΔT outliers."""

import argparse
import json

from aisf.data import REGIMES
from aisf.models import KINDS
from aisf.studies import ordering
from aisf.training import SEEDS


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--models", nargs="+", default=["proposed", "lstm"], choices=KINDS)
    ap.add_argument("--seeds", nargs="+", type=int, default=list(SEEDS))
    ap.add_argument("--regime", default="medium", choices=list(REGIMES))
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--json", help="write every run's metrics here")
    args = ap.parse_args()
    res = ordering(args.models, args.seeds, args.regime, args.epochs)
    print()
    for m in args.models:
        print(f"{m:<10} mean rpd {res.mean(m):+.5f}  mean |rpd| {res.mean(m, 'abs_rpd'):.5f}  mean hte {res.mean(m, 'hte'):.4f}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(res.rows, fh, indent=2)


if __name__ == "__main__":
    main()
