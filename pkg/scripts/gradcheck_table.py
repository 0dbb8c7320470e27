"""Full finite-difference table across every primitive, layer and model."""

import argparse
import sys

from aisf.gradcheck import format_table, run_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--layer")
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rows = run_suite(args.layer, args.trials, args.seed)
    print(format_table(rows))
    sys.exit(0 if all(r.passed for r in rows) else 1)


if __name__ == "__main__":
    main()
