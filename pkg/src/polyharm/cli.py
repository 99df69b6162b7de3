"""Command line entry point: ``polyharm {run,solve,analyze,oracles,link,report}``.

Flags such as ``--h`` or ``--tol`` fill config fields the config leaves unset;
values present in the config file win.  Output goes to ``--out``, else the
config's ``output`` field, else ``$POLYHARM_OUTPUT_ROOT/<name>`` (default
root ``runs``).
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

from . import experiment as ex
from .domain import model_from_spec
from .links import EIGEN_HEADER, extract_link, lambda1, predicted_exponent
from .oracles import reports_to_csv, run_oracle_suite

log = logging.getLogger("polyharm")

# command line flag -> dotted config path
FLAG_PATHS = {
    "r": "domain.r",
    "h": "domain.h",
    "grading": "domain.grading",
    "seed": "seed",
    "tol": "solver.tol",
    "omega": "solver.omega",
    "max_sweeps": "solver.max_sweeps",
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", help="path to a JSON config or the name of a bundled config")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--r", type=float, help="domain radius")
    p.add_argument("--h", type=float, help="mesh size")
    p.add_argument("--grading", type=float, help="radial mesh grading exponent")
    p.add_argument("--seed", type=int, help="RNG seed")
    p.add_argument("--tol", type=float, help="solver stopping tolerance on the largest vertex move")
    p.add_argument("--omega", type=float, help="over-relaxation factor in (0, 2)")
    p.add_argument("--max-sweeps", dest="max_sweeps", type=int, help="sweep budget")


def _config(args) -> ex.ExperimentConfig:
    defaults = {path: getattr(args, flag) for flag, path in FLAG_PATHS.items()
                if getattr(args, flag, None) is not None}
    return ex.resolve_config(args.config, defaults)


def _print_summary(rows) -> bool:
    ok = True
    for s in rows:
        v = s["value"] if isinstance(s["value"], str) else repr(s["value"])
        print(f"{s['status']:4s} {s['check']}: {v} (band {s['band']})")
        ok &= s["status"] == "PASS"
    return ok


def cmd_run(args) -> int:
    cfg = _config(args)
    res = ex.run_experiment(cfg, args.out)
    print(f"{cfg.name}: outputs in {res.outdir}")
    return 0 if _print_summary(res.summary) else 1


def cmd_solve(args) -> int:
    cfg = _config(args)
    res = ex.solve(cfg, args.out)
    ex.write_summary(res)
    print(f"{cfg.name}: energy {res.report.total!r} after {res.report.iterations} sweeps; outputs in {res.outdir}")
    return 0 if _print_summary(res.summary) else 1


def cmd_analyze(args) -> int:
    cfg = _config(args)
    try:
        res = ex.load_solution(cfg, args.out)
    except FileNotFoundError as e:
        raise ex.ConfigError(f"no checkpoint for {cfg.name!r}; run 'polyharm solve' first ({e})") from e
    # keep the solver lines written by an earlier 'solve'
    prev = res.outdir / "summary.csv"
    if prev.exists():
        with open(prev, newline="") as fh:
            res.summary = [r for r in csv.DictReader(fh) if r["check"] in ("solver_converged", "energy_monotone")]
    res = ex.analyze(res)
    return 0 if _print_summary(res.summary) else 1


def cmd_oracles(args) -> int:
    out = Path(args.out) if args.out else Path(ex.output_root()) / "oracles"
    out.mkdir(parents=True, exist_ok=True)
    suite = run_oracle_suite(args.seed, args.samples, args.adversarial, args.scale_samples)
    (out / "oracles.csv").write_text(reports_to_csv(suite.reports))
    if suite.sweep is not None:
        buf = [["eps0", "delta0", "violations", "worst_margin"]]
        for i, e in enumerate(suite.sweep.eps):
            for j, d in enumerate(suite.sweep.deltas):
                buf.append([repr(e), repr(d), int(suite.sweep.violations[i, j]), repr(float(suite.sweep.worst[i, j]))])
        _write_rows(out / "quadrilateral_sweep.csv", buf)
    if suite.scale:
        rows = [["name", "hs", "envelope", "slope", "cubic_constant"]] + [s.row() for s in suite.scale]
        _write_rows(out / "scale_family.csv", rows)
    for r in suite.reports:
        tag = "PASS" if r.passed else "FAIL"
        if r.vacuous:
            tag = "PASS (vacuous)"
        print(f"{tag:15s} {r.name}: {r.violations}/{r.samples} violations, worst margin {r.worst_margin!r}")
    for s in suite.scale:
        print(f"{'':15s} scale family {s.name}: slope {s.slope:.3f}")
    return 0 if suite.passed else 1


def _write_rows(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def cmd_link(args) -> int:
    if args.config:
        cfg = _config(args)
        model = cfg.model()
        L = cfg.analytics.get("link", {})
        point = args.point or L.get("point", "vertex")
        k = L.get("k", 0) if args.k is None else args.k
    else:
        spec = {"kind": args.kind}
        if args.kind == "cone":
            spec["total_angle"] = args.angle_over_pi * math.pi
        elif args.kind == "book":
            spec["pages"] = args.pages
        elif args.kind == "wedge":
            spec["angle"] = args.angle_over_pi * math.pi
        model = model_from_spec(spec)
        point = args.point or "vertex"
        k = args.k or 0
    link = extract_link(model, point)
    results = [lambda1(link, t, args.subdivision if t == "real" else args.tripod_subdivision, seed=args.seed or 0)
               for t in args.target]
    beta = min(r.lam1 for r in results)
    pred = predicted_exponent(beta, model.n, k)
    for r in results:
        print(f"{r.link} [{r.target}] lambda1 = {r.lam1!r}")
    print(f"predicted exponent {pred.alpha!r}" + (" (Lipschitz)" if pred.lipschitz else ""))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        _write_rows(Path(args.out), [EIGEN_HEADER] + [r.row(pred.alpha) for r in results])
    return 0


def cmd_report(args) -> int:
    dirs = []
    for ref in args.runs or [str(p) for p in sorted(Path(ex.output_root()).glob("*/summary.csv"))]:
        p = Path(ref)
        dirs.append(p if p.name == "summary.csv" else p / "summary.csv")
    if not dirs:
        print("no summaries found", file=sys.stderr)
        return 1
    ok = True
    for path in dirs:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        print(f"== {path.parent.name}")
        ok &= _print_summary(rows)
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="polyharm", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", help="solve and analyze a config")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("solve", help="mesh and minimize; writes mesh, checkpoint and energy history")
    _add_config_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("analyze", help="analytics on a previously solved checkpoint")
    _add_config_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("oracles", help="randomized comparison-inequality checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--scale-samples", dest="scale_samples", type=int, default=None)
    p.add_argument("--adversarial", type=float, default=0.0,
                   help="subtract this from every margin (detector self-test, e.g. 1e-3)")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_oracles)

    p = sub.add_parser("link", help="first link eigenvalue and predicted exponent")
    p.add_argument("config", nargs="?", help="config whose domain supplies the model")
    p.add_argument("--kind", default="cone", choices=["cone", "flat", "book", "wedge"])
    p.add_argument("--angle-over-pi", dest="angle_over_pi", type=float, default=4.0)
    p.add_argument("--pages", type=int, default=3)
    p.add_argument("--point", choices=["vertex", "spine", "regular"])
    p.add_argument("--k", type=int, help="dimension of the stratum through the point")
    p.add_argument("--target", nargs="+", default=["real"], choices=["real", "tripod"])
    p.add_argument("--subdivision", type=int, default=512)
    p.add_argument("--tripod-subdivision", dest="tripod_subdivision", type=int, default=32)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="CSV file for the eigenvalue table")
    for flag in ("r", "h", "grading", "tol", "omega", "max_sweeps"):
        p.set_defaults(**{flag: None})
    p.set_defaults(func=cmd_link)

    p = sub.add_parser("report", help="print summaries of finished runs")
    p.add_argument("runs", nargs="*", help="run directories (default: every run under the output root)")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ex.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
