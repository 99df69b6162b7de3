"""Solve and analyze every bundled config; print one summary block per run.

Usage: python3 scripts/run_suite.py [--out DIR] [name ...]
"""

import argparse
import sys
import time

from polyharm.experiment import bundled_names, load_bundled, run_experiment


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("names", nargs="*")
    ap.add_argument("--out", default="runs")
    args = ap.parse_args()
    ok = True
    for name in args.names or bundled_names():
        t0 = time.perf_counter()
        res = run_experiment(load_bundled(name), out=f"{args.out}/{name}")
        print(f"== {name} ({time.perf_counter() - t0:.1f} s)")
        for s in res.summary:
            print(f"  {s['status']:4s} {s['check']} = {s['value']!r}  band {s['band']}")
        ok &= res.passed
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
