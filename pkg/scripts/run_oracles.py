"""Comparison-inequality oracles at full sample size, plus the quadrilateral
threshold table and the scale-family slopes.

Usage: python3 scripts/run_oracles.py [--seed S] [--samples N]
"""

import argparse
import sys
import time

from polyharm.oracles import run_oracle_suite


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--samples", type=int, default=100_000)
    args = ap.parse_args()
    t0 = time.perf_counter()
    suite = run_oracle_suite(args.seed, args.samples)
    for r in suite.reports:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name:22s} {r.violations:6d}/{r.samples} worst {r.worst_margin:+.3e} {r.params}")
    print("largest violation-free delta0 per eps0:")
    for e in suite.sweep.eps:
        print(f"  eps0={e:<6g} delta0*={suite.sweep.thresholds[e]}")
    for s in suite.scale:
        env = ", ".join(f"{e:.2e}" for e in s.envelope)
        print(f"scale family {s.name}: envelope [{env}] slope {s.slope:.3f}")
    print(f"{time.perf_counter() - t0:.1f} s")
    return 0 if suite.passed else 1


if __name__ == "__main__":
    sys.exit(main())
