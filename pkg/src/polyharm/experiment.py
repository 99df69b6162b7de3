"""Experiment configs, named boundary traces and the end-to-end runner."""

from __future__ import annotations

import csv
import io
import json
import os
import math
import time
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.sparse.linalg as sla

from . import analytics as an
from .domain import Mesh, make_metric, model_from_spec, triangulate, write_mesh
from .energy import minimize, read_checkpoint, stiffness_matrix, total_energy
from .links import EIGEN_HEADER, extract_link, lambda1, predicted_exponent
from .targets import Arc, BallConstraint, Euclidean, Sphere, TargetSpace, make_space, sphere_exp

SCHEMA_VERSION = 1
OUTPUT_ENV = "POLYHARM_OUTPUT_ROOT"


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    name: str
    domain: dict
    target: dict
    trace: dict
    metric: dict = field(default_factory=lambda: {"name": "euclidean"})
    ball: dict | None = None
    solver: dict = field(default_factory=dict)
    analytics: dict = field(default_factory=dict)
    acceptance: dict = field(default_factory=dict)
    seed: int = 0
    output: str | None = None
    schema_version: int = SCHEMA_VERSION

    @classmethod
    def from_dict(cls, d: dict, defaults: dict | None = None) -> "ExperimentConfig":
        d = json.loads(json.dumps(d))  # deep copy
        if d.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {d.get('schema_version')}")
        for key in ("name", "domain", "target", "trace"):
            if key not in d:
                raise ConfigError(f"config is missing {key!r}")
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        for path, value in (defaults or {}).items():
            _set_default(d, path, value)
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, defaults: dict | None = None) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()), defaults)

    def validate(self) -> None:
        if self.ball is not None:
            tau = float(self.ball["radius"])
            try:
                BallConstraint(np.asarray(self.ball["center"], dtype=float), tau)
            except ValueError as e:
                raise ConfigError(f"ball: {e}") from None
        try:
            self.model()
            self.space()
            make_metric(self.metric, int(self.domain.get("n", 2)), float(self.domain.get("r", 1.0)))
        except (KeyError, ValueError) as e:
            raise ConfigError(f"{self.name}: {e}") from None
        if self.target.get("kind") == "sphere" and self.ball is None:
            raise ConfigError("sphere targets need a ball constraint of radius < pi/2")
        if self.trace.get("name") not in TRACES:
            raise ConfigError(f"unknown trace {self.trace.get('name')!r}")
        d = self.domain
        if not float(d.get("h", 0.05)) < float(d.get("r", 1.0)) / 4:
            raise ConfigError("mesh size h must be below r/4")

    def model(self):
        spec = dict(self.domain)
        if "total_angle_over_pi" in spec:
            spec["total_angle"] = math.pi * float(spec.pop("total_angle_over_pi"))
        return model_from_spec(spec)

    def space(self) -> TargetSpace:
        return make_space(self.target)

    def ball_constraint(self) -> BallConstraint | None:
        if self.ball is None:
            return None
        return BallConstraint(np.asarray(self.ball["center"], dtype=float), float(self.ball["radius"]))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _set_default(d: dict, path: str, value):
    """Set ``a.b.c`` in nested dict ``d`` unless the config already has it."""
    keys = path.split(".")
    cur = d
    for k in keys[:-1]:
        cur = cur.setdefault(k, {})
        if cur is None:
            return
    cur.setdefault(keys[-1], value)


def bundled_names() -> list:
    files = resources.files("polyharm").joinpath("configs")
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".json"))


def load_bundled(name: str, defaults: dict | None = None) -> ExperimentConfig:
    text = resources.files("polyharm").joinpath("configs", f"{name}.json").read_text()
    return ExperimentConfig.from_dict(json.loads(text), defaults)


def resolve_config(ref: str, defaults: dict | None = None) -> ExperimentConfig:
    p = Path(ref)
    if p.exists():
        return ExperimentConfig.load(p, defaults)
    if ref in bundled_names():
        return load_bundled(ref, defaults)
    raise ConfigError(f"no config file or bundled config named {ref!r}")


# ---------------------------------------------------------------------------
# Boundary traces


def _modes(mesh: Mesh, modes) -> np.ndarray:
    rho = np.hypot(mesh.points[:, 0], mesh.points[:, 1])
    phi = mesh.polar_angle()
    out = np.zeros(mesh.num_vertices)
    for nu, c in modes:
        out += c * rho**nu * np.cos(nu * phi)
    return out


def trace_linear(mesh: Mesh, spec: dict, space) -> np.ndarray:
    x = mesh.points
    coef = np.asarray(spec.get("gradient", [1.0, 0.0]), dtype=float)
    return (float(spec.get("offset", 0.0)) + float(spec.get("scale", 1.0)) * (x[:, : len(coef)] @ coef))[:, None]


def trace_angular_modes(mesh: Mesh, spec: dict, space) -> np.ndarray:
    """``offset + scale * sum_j c_j rho^nu_j cos(nu_j phi)`` in the unrolled angle."""
    return (float(spec.get("offset", 0.0)) + float(spec.get("scale", 1.0)) * _modes(mesh, spec["modes"]))[:, None]


def trace_book_pages(mesh: Mesh, spec: dict, space) -> np.ndarray:
    """``offset + scale (x + b_page y + c (x^2 - y^2))``; continuous across the spine."""
    x, y = mesh.points[:, 0], mesh.points[:, 1]
    b = np.asarray(spec["page_slopes"], dtype=float)[mesh.home]
    c = float(spec.get("quadratic", 0.0))
    val = x + b * y + c * (x * x - y * y)
    return (float(spec.get("offset", 0.0)) + float(spec.get("scale", 1.0)) * val)[:, None]


def trace_tangent_modes(mesh: Mesh, spec: dict, space) -> np.ndarray:
    """Sphere-valued: ``exp_c(u e_1 + v e_2)`` with ``u``, ``v`` angular-mode sums."""
    if not isinstance(space, Sphere) or space.m != 2:
        raise ConfigError("tangent_modes traces need an S^2 target")
    c = np.asarray(spec["center"], dtype=float)
    c = c / np.linalg.norm(c)
    a = np.array([1.0, 0.0, 0.0]) if abs(c[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = a - (a @ c) * c
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(c, e1)
    u = _modes(mesh, spec["modes_u"])
    v = _modes(mesh, spec["modes_v"])
    amp = float(spec.get("amplitude", 1.0))
    tang = amp * (u[:, None] * e1 + v[:, None] * e2)
    return sphere_exp(np.broadcast_to(c, tang.shape), tang)


TRACES = {
    "linear": trace_linear,
    "angular_modes": trace_angular_modes,
    "book_pages": trace_book_pages,
    "tangent_modes": trace_tangent_modes,
}


def build_trace(mesh: Mesh, spec: dict, space: TargetSpace) -> np.ndarray:
    vals = TRACES[spec["name"]](mesh, spec, space)
    if isinstance(space, Arc):
        if vals[mesh.boundary].min() < 0 or vals[mesh.boundary].max() > space.length:
            raise ConfigError("trace leaves the arc")
        vals = np.clip(vals, 0.0, space.length)
    return vals


# ---------------------------------------------------------------------------
# CSV helpers


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def _band_line(name, value, lo, hi):
    ok = bool(lo <= value <= hi)
    return {"check": name, "value": float(value), "band": f"[{lo!r}, {hi!r}]", "status": "PASS" if ok else "FAIL"}


# ---------------------------------------------------------------------------
# Running


@dataclass
class RunResult:
    config: ExperimentConfig
    mesh: Mesh
    values: np.ndarray
    report: object
    outdir: Path
    trace: np.ndarray | None = None
    metric: object = None
    space: TargetSpace | None = None
    summary: list = field(default_factory=list)
    profile: an.RadialProfile | None = None
    order: an.OrderEstimate | None = None
    holder: an.HolderFit | None = None
    eigen: object = None
    blowup: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(s["status"] == "PASS" for s in self.summary)


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "runs"))


def output_dir(cfg: ExperimentConfig, out=None) -> Path:
    if out is not None:
        return Path(out)
    if cfg.output:
        return Path(cfg.output)
    return output_root() / cfg.name


def solve(cfg: ExperimentConfig, out=None, write: bool = True) -> RunResult:
    t0 = time.perf_counter()
    d = cfg.domain
    model = cfg.model()
    mesh = triangulate(model, float(d.get("r", 1.0)), float(d.get("h", 0.05)), float(d.get("grading", 1.0)))
    space = cfg.space()
    metric = make_metric(cfg.metric, model.n, mesh.r)
    trace = build_trace(mesh, cfg.trace, space)
    ball = cfg.ball_constraint()
    s = cfg.solver
    outdir = output_dir(cfg, out)
    ckpt = None
    if write:
        outdir.mkdir(parents=True, exist_ok=True)
        write_mesh(mesh, outdir / "mesh.txt")
        ckpt = outdir / "checkpoint.txt"
        if ckpt.exists():
            ckpt.unlink()
    u, rep = minimize(mesh, space, trace, ball, metric, tol=float(s.get("tol", 1e-9)),
                      max_sweeps=int(s.get("max_sweeps", 100_000)), omega=float(s.get("omega", 1.0)),
                      checkpoint=ckpt)
    res = RunResult(cfg, mesh, u.values, rep, outdir, trace, metric, space)
    res.timings["solve"] = time.perf_counter() - t0
    res.summary.append({"check": "solver_converged", "value": float(rep.final_move),
                        "band": f"< {float(s.get('tol', 1e-9))!r}",
                        "status": "PASS" if rep.converged else "FAIL"})
    res.summary.append({"check": "energy_monotone", "value": float(rep.total), "band": "nonincreasing history",
                        "status": "PASS" if rep.monotone else "FAIL"})
    if write:
        rows = [[i, repr(float(e))] for i, e in enumerate(rep.history)]
        (outdir / "energy.csv").write_text(_csv(rows, ["sweep", "energy"]))
        res.artifacts["energy"] = outdir / "energy.csv"
    return res


def _oracle_checks(res: RunResult):
    """Compare real/arc solutions with a direct sparse FEM solve."""
    mesh, space = res.mesh, res.space
    if not isinstance(space, (Euclidean, Arc)) or space.coord_dim != 1:
        return
    K = stiffness_matrix(mesh, res.metric)
    b = mesh.boundary
    i = ~b
    v = res.trace[:, 0].copy()
    v[i] = sla.spsolve(K[i][:, i].tocsc(), -(K[i][:, b] @ v[b]))
    d = res.values[:, 0] - v
    enorm = math.sqrt(max(float(d @ (K @ d)), 0.0))
    band = res.config.acceptance.get("fem_energy_norm", 1e-8)
    res.summary.append(_band_line("fem_energy_norm", enorm, 0.0, band))
    if isinstance(space, Arc):
        sup = float(np.abs(d).max())
        res.summary.append(_band_line("fem_sup_distance", sup, 0.0, 3 * mesh.h**2))


def analyze(res: RunResult, write: bool = True) -> RunResult:
    cfg = res.config
    A = cfg.analytics
    acc = cfg.acceptance
    mesh, space, metric = res.mesh, res.space, res.metric
    outdir = res.outdir
    t0 = time.perf_counter()
    if A.get("fem_oracle"):
        _oracle_checks(res)
    if "profile" in A:
        p = A["profile"]
        radii = an.octave_radii(float(p.get("sigma_max", 0.5)), int(p.get("octaves", 3)), int(p.get("per_octave", 1)))
        prof = an.radial_profile(mesh, space, res.values, radii, metric, int(p.get("resolution", 2048)),
                                 min_cells=float(p.get("min_cells", 8.0)))
        order = an.order_profile(prof)
        res.profile, res.order = prof, order
        q = mesh.n - 2 + 2 * order.limit
        mono = an.monotonicity_check(prof, q)
        res.summary.append(_band_line("monotonicity_worst_decrease", mono, 0.0, acc.get("monotonicity", 0.03)))
        if "alpha" in acc:
            c, w = acc["alpha"]
            res.summary.append(_band_line("order_alpha", order.limit, c - w, c + w))
        if write:
            (outdir / "profile.csv").write_text(prof.to_csv())
            rows = [[repr(order.limit), repr(order.uncertainty), "" if order.rate is None else repr(order.rate),
                     repr(q), repr(mono)]]
            (outdir / "order.csv").write_text(_csv(rows, ["alpha", "uncertainty", "rate", "q", "monotonicity"]))
    if "holder" in A:
        h = A["holder"]
        fit = an.holder_fit(mesh, space, res.values, float(h.get("region", 0.5)), int(h.get("pairs", 20000)),
                            h.get("policy", "random"), int(h.get("bins", 12)), cfg.seed,
                            (h.get("sep_min"), h.get("sep_max")))
        res.holder = fit
        if "gamma" in acc:
            lo, hi = acc["gamma"]
            res.summary.append(_band_line("holder_gamma", fit.exponent, lo, hi))
        if write:
            (outdir / "holder.csv").write_text(_csv([fit.row()], an.HOLDER_HEADER))
    if "link" in A:
        L = A["link"]
        link = extract_link(mesh.model, L.get("point", "vertex"), metric if metric.name != "euclidean" else None)
        er = lambda1(link, "real", int(L.get("subdivision", 512)))
        results = [er]
        if L.get("tripod"):
            results.append(lambda1(link, "tripod", int(L.get("tripod_subdivision", 32)),
                                   restarts=int(L.get("restarts", 50)), seed=cfg.seed))
        beta = min(r.lam1 for r in results)
        pred = predicted_exponent(beta, mesh.n, int(L.get("k", 0)))
        res.eigen = (results, pred)
        if "lambda1" in acc:
            c, w = acc["lambda1"]
            res.summary.append(_band_line("link_lambda1", beta, c - w, c + w))
        if "prediction_rel" in acc and res.order is not None:
            rel = abs(res.order.limit - pred.alpha) / pred.alpha
            res.summary.append(_band_line("prediction_consistency", rel, 0.0, acc["prediction_rel"]))
        if write:
            rows = [r.row(pred.alpha) for r in results]
            (outdir / "eigen.csv").write_text(_csv(rows, EIGEN_HEADER))
    if "blowup" in A and res.order is not None:
        B = A["blowup"]
        loc = an.PointLocator(mesh)
        frames = [an.blow_up(mesh, space, res.values, float(l), metric, per_wedge=int(B.get("per_wedge", 24)),
                             locator=loc) for l in B["lambdas"]]
        alpha = float(B.get("alpha", res.order.limit))
        devs = an.homogeneity_check(frames, alpha)
        res.blowup = list(zip(frames, devs))
        if acc.get("blowup_decreasing"):
            dec = all(b < a for a, b in zip(devs, devs[1:]))
            res.summary.append({"check": "blowup_deviation_decreasing", "value": float(devs[-1]),
                                "band": "strictly decreasing in lambda", "status": "PASS" if dec else "FAIL"})
        if write:
            rows = [[repr(f.lam), repr(f.mu), repr(f.I), repr(dv)] for f, dv in res.blowup]
            (outdir / "blowup.csv").write_text(_csv(rows, ["lambda", "mu", "I", "deviation"]))
    res.timings["analyze"] = time.perf_counter() - t0
    if write:
        write_summary(res)
    return res


def write_summary(res: RunResult) -> None:
    rows = [[s["check"], s["value"] if isinstance(s["value"], str) else repr(s["value"]), s["band"], s["status"]]
            for s in res.summary]
    (res.outdir / "summary.csv").write_text(_csv(rows, ["check", "value", "band", "status"]))


def run_experiment(cfg: ExperimentConfig, out=None, write: bool = True) -> RunResult:
    """Mesh, solve and analyze one config; CSV outputs are deterministic."""
    return analyze(solve(cfg, out, write), write)


def load_solution(cfg: ExperimentConfig, out=None) -> RunResult:
    """Rebuild a run from the checkpoint written by :func:`solve`."""
    outdir = output_dir(cfg, out)
    d = cfg.domain
    mesh = triangulate(cfg.model(), float(d.get("r", 1.0)), float(d.get("h", 0.05)), float(d.get("grading", 1.0)))
    space = cfg.space()
    metric = make_metric(cfg.metric, mesh.n, mesh.r)
    values = read_checkpoint(outdir / "checkpoint.txt")
    rep = total_energy(mesh, space, values, metric)
    return RunResult(cfg, mesh, values, rep, outdir, build_trace(mesh, cfg.trace, space), metric, space)
