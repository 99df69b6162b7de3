"""Measured order at the tip of a cone of total angle theta against the
prediction from the first link eigenvalue, for several theta.

Real-valued minimizers with trace cos(2 pi phi / theta); the exact answer is
alpha = 2 pi / theta.

Usage: python3 scripts/cone_exponents.py [--h 0.02] [--angles 2.5 3 4 5]
"""

import argparse
import math

from polyharm.experiment import ExperimentConfig, run_experiment


def config(angle_over_pi: float, h: float) -> ExperimentConfig:
    nu = 2.0 / angle_over_pi
    return ExperimentConfig.from_dict({
        "name": f"cone_{angle_over_pi:g}pi",
        "domain": {"kind": "cone", "total_angle_over_pi": angle_over_pi, "r": 1.0, "h": h, "grading": 2.0},
        "target": {"kind": "euclidean", "m": 1},
        "trace": {"name": "angular_modes", "modes": [[nu, 1.0], [2 * nu, 0.2]]},
        "solver": {"tol": 1e-11, "omega": 1.9},
        "analytics": {"profile": {"sigma_max": 0.5, "octaves": 4}, "link": {"point": "vertex"}},
    })


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--h", type=float, default=0.02)
    ap.add_argument("--angles", type=float, nargs="+", default=[2.5, 3.0, 4.0, 5.0])
    args = ap.parse_args()
    print("theta/pi  exact     measured  lambda1   predicted")
    for a in args.angles:
        res = run_experiment(config(a, args.h), write=False)
        (eig,), pred = res.eigen
        print(f"{a:7.2f}  {2 / a:.5f}  {res.order.limit:.5f}  {eig.lam1:.6f}  {pred.alpha:.5f}")


if __name__ == "__main__":
    main()
