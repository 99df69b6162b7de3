"""Randomized checks of CAT(1) comparison inequalities on S^2, trees and cones.

Every check returns margins ``rhs - lhs`` so that a negative margin below
``-TOL`` is a violation.  Sampling is vectorized; reports are deterministic
for a given seed.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .cone import cone_distance_raw
from .targets import Sphere, TargetSpace, Tree, sphere_dist, sphere_exp

TOL = 1e-9
S2 = Sphere(2)


@dataclass
class OracleReport:
    name: str
    samples: int
    violations: int
    worst_margin: float
    params: dict = field(default_factory=dict)
    seed: int | None = None

    @property
    def passed(self) -> bool:
        return self.violations == 0

    @property
    def vacuous(self) -> bool:
        return self.samples == 0

    def row(self) -> list:
        p = ";".join(f"{k}={v!r}" for k, v in sorted(self.params.items()))
        return [self.name, self.samples, self.violations, repr(float(self.worst_margin)), p, self.seed]


REPORT_HEADER = ["check", "samples", "violations", "worst_margin", "parameters", "seed"]


def make_report(name, margins, params=None, seed=None, tol=TOL) -> OracleReport:
    m = np.asarray(margins, dtype=float).ravel()
    worst = float(m.min()) if m.size else math.inf
    return OracleReport(name, int(m.size), int((m < -tol).sum()), worst, dict(params or {}), seed)


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Sampling helpers


def random_sphere(rng, n: int, m: int = 2) -> np.ndarray:
    x = rng.normal(size=(n, m + 1))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def tangent_frame(p: np.ndarray):
    """Two orthonormal tangent vectors at each row of ``p`` (S^2 only)."""
    a = np.where(np.abs(p[:, :1]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
    e1 = a - np.sum(a * p, axis=1, keepdims=True) * p
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(p, e1)
    return e1, e2


def cap_points(rng, center: np.ndarray, radius, n: int | None = None) -> np.ndarray:
    """Uniform samples (by area) of caps of given radii around ``center`` rows."""
    center = np.atleast_2d(center)
    n = len(center) if n is None else n
    center = np.broadcast_to(center, (n, 3))
    radius = np.broadcast_to(np.asarray(radius, dtype=float), (n,))
    cosr = np.cos(radius)
    z = 1.0 - rng.uniform(0, 1, n) * (1.0 - cosr)
    th = np.arccos(np.clip(z, -1, 1))
    phi = rng.uniform(0, 2 * np.pi, n)
    e1, e2 = tangent_frame(center)
    v = th[:, None] * (np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2)
    return sphere_exp(center, v)


def random_tree_points(rng, tree: Tree, n: int) -> np.ndarray:
    e = rng.integers(0, len(tree.edges), n)
    off = rng.uniform(0, 1, n) * tree._el[e]
    return np.column_stack([e.astype(float), off])


# ---------------------------------------------------------------------------
# Comparison triangles and the CAT(1) condition


def comparison_triangle(dPQ, dQR, dRP):
    """Points on S^2 with the given pairwise distances (vectorized).

    ``Q`` is placed at ``e_1`` and ``P`` on the equator.
    """
    a = np.atleast_1d(np.asarray(dPQ, dtype=float))
    b = np.atleast_1d(np.asarray(dQR, dtype=float))
    c = np.atleast_1d(np.asarray(dRP, dtype=float))
    a, b, c = np.broadcast_arrays(a, b, c)
    slack = 1e-12
    if np.any(a + b < c - slack) or np.any(b + c < a - slack) or np.any(c + a < b - slack):
        raise ValueError("side lengths violate the triangle inequality")
    if np.any(a + b + c >= 2 * np.pi):
        raise ValueError("perimeter must be below 2 pi")
    n = a.shape
    Q = np.zeros(n + (3,))
    Q[..., 0] = 1.0
    P = np.stack([np.cos(a), np.sin(a), np.zeros(n)], axis=-1)
    # angle at Q from the half-angle formulas (accurate for thin triangles)
    sp = 0.5 * (a + b + c)
    num = np.sin(np.maximum(sp - a, 0.0)) * np.sin(np.maximum(sp - b, 0.0))
    dnm = np.sin(sp) * np.sin(np.maximum(sp - c, 0.0))
    g = 2.0 * np.arctan2(np.sqrt(np.maximum(num, 0.0)), np.sqrt(np.maximum(dnm, 0.0)))
    g = np.where(np.sin(a) * np.sin(b) > 0, g, 0.0)
    R = np.stack([np.cos(b), np.sin(b) * np.cos(g), np.sin(b) * np.sin(g)], axis=-1)
    return P, Q, R


def cat1_margins(space: TargetSpace, P, Q, R, t, s) -> np.ndarray:
    """``d~(P~_t, R~_s) - d(P_t, R_s)`` for geodesic triangles PQR."""
    P, Q, R = (space.batch(x) for x in (P, Q, R))
    t = np.broadcast_to(np.asarray(t, dtype=float), (len(P),))
    s = np.broadcast_to(np.asarray(s, dtype=float), (len(P),))
    dPQ = space.distances(P, Q)
    dQR = space.distances(Q, R)
    dRP = space.distances(R, P)
    if np.any(dPQ + dQR + dRP >= 2 * np.pi):
        raise ValueError("triangle perimeter must be below 2 pi")
    Pt = space.interpolate_batch(P, Q, t)
    Rs = space.interpolate_batch(R, Q, s)
    d = space.distances(Pt, Rs)
    Pc, Qc, Rc = comparison_triangle(dPQ, dQR, np.minimum(dRP, dPQ + dQR))
    Ptc = S2.interpolate_batch(Pc, Qc, t)
    Rsc = S2.interpolate_batch(Rc, Qc, s)
    return sphere_dist(Ptc, Rsc) - d


def check_cat1_condition(space: TargetSpace, P, Q, R, t: float, s: float) -> float:
    return float(cat1_margins(space, np.atleast_2d(space.point(P)), np.atleast_2d(space.point(Q)),
                              np.atleast_2d(space.point(R)), t, s)[0])


def sample_cat1_sphere(rng, n: int, max_side: float = 2.0):
    """Triangles in S^2 with sides < max_side (perimeter < 2 pi)."""
    Q = random_sphere(rng, n)
    P = cap_points(rng, Q, max_side / 2)
    R = cap_points(rng, Q, max_side / 2)
    return P, Q, R


# ---------------------------------------------------------------------------
# Quadrilateral inequality


def quadrilateral_excess(P, Q, R, S) -> np.ndarray:
    """``d_PR^2 + d_QS^2 - (d_PQ^2 + d_QR^2 + d_RS^2 + d_SP^2)``."""
    d = sphere_dist
    return (d(P, R) ** 2 + d(Q, S) ** 2
            - d(P, Q) ** 2 - d(Q, R) ** 2 - d(R, S) ** 2 - d(S, P) ** 2)


def max_side(P, Q, R, S) -> np.ndarray:
    d = sphere_dist
    return np.max(np.stack([d(P, Q), d(Q, R), d(R, S), d(S, P)]), axis=0)


def sample_quadrilaterals(rng, n: int, delta0: float):
    """Quadruples with max side exactly ``delta0`` (up to roundoff, never above).

    Half are near-rhombi ``exp_c(a), exp_c(b), exp_c(-a), exp_c(-b)``, which
    nearly saturate the inequality; half are random points in a small cap.
    """
    c = random_sphere(rng, n)
    e1, e2 = tangent_frame(c)
    k = n // 2
    ang = rng.uniform(0, 2 * np.pi, (n, 2))
    rad = rng.uniform(0.2, 1.0, (n, 2))
    a = rad[:, :1] * (np.cos(ang[:, :1]) * e1 + np.sin(ang[:, :1]) * e2)
    b = rad[:, 1:] * (np.cos(ang[:, 1:]) * e1 + np.sin(ang[:, 1:]) * e2)
    tang = [a, b, -a, -b]
    rnd = rng.normal(size=(4, n, 2))
    for j in range(4):
        t = rnd[j][:, :1] * e1 + rnd[j][:, 1:] * e2
        tang[j] = np.where(np.arange(n)[:, None] < k, tang[j], t)
    scale = np.ones((n, 1))
    for _ in range(6):
        pts = [sphere_exp(c, scale * v) for v in tang]
        ms = max_side(*pts)
        if np.all(ms <= delta0):
            break
        scale = scale * (delta0 / np.maximum(ms, 1e-300))[:, None] * (1 - 1e-13)
    pts = [sphere_exp(c, scale * v) for v in tang]
    return pts


def check_quadrilateral(P, Q, R, S, eps0: float, delta0: float) -> OracleReport:
    P, Q, R, S = (np.atleast_2d(x) for x in (P, Q, R, S))
    if np.any(max_side(P, Q, R, S) > delta0 * (1 + 1e-12)):
        raise ValueError("quadrilateral sides exceed delta0")
    margin = eps0 * delta0**2 - quadrilateral_excess(P, Q, R, S)
    return make_report("quadrilateral", margin, {"eps0": eps0, "delta0": delta0})


DELTA_GRID = tuple(0.8 / 2**j for j in range(10)) + (1e-3,)
EPS_GRID = (0.1, 0.03, 0.01, 0.003, 0.001)


@dataclass
class QuadrilateralSweep:
    deltas: tuple
    eps: tuple
    violations: np.ndarray  # (len(eps), len(deltas))
    worst: np.ndarray
    thresholds: dict  # eps0 -> largest delta0 with zero violations at it and below
    samples: int

    @property
    def monotone_nondecreasing(self) -> bool:
        th = [self.thresholds[e] or 0.0 for e in sorted(self.eps)]
        return all(x <= y for x, y in zip(th, th[1:]))


def quadrilateral_sweep(rng, samples: int, deltas=DELTA_GRID, eps=EPS_GRID) -> QuadrilateralSweep:
    viol = np.zeros((len(eps), len(deltas)), dtype=int)
    worst = np.zeros((len(eps), len(deltas)))
    for j, d0 in enumerate(deltas):
        if samples == 0:
            worst[:, j] = np.inf
            continue
        excess = quadrilateral_excess(*sample_quadrilaterals(rng, samples, d0))
        for i, e in enumerate(eps):
            m = e * d0**2 - excess
            viol[i, j] = int((m < -TOL).sum())
            worst[i, j] = float(m.min())
    order = np.argsort(deltas)
    thresholds = {}
    for i, e in enumerate(eps):
        best = None
        for j in order:
            if viol[i, j] > 0:
                break
            best = deltas[j]
        thresholds[e] = best
    return QuadrilateralSweep(tuple(deltas), tuple(eps), viol, worst, thresholds, samples)


# ---------------------------------------------------------------------------
# Interpolation estimates (scale families)


def interpolation_rhs(dPS, dQS, dQP, eta, etap) -> np.ndarray:
    """Leading terms of the squared-distance bound between interpolants."""
    s = np.sin(dQS)
    ratio = np.where(s > 0, np.sin((1 - eta) * dQS) ** 2 / np.where(s > 0, s, 1.0) ** 2, (1 - eta) ** 2)
    return ratio * (dPS**2 - (dQS - dQP) ** 2) + ((1 - eta) * (dQS - dQP) + (etap - eta) * dQS) ** 2


def linearized_rhs(dPS, dQS, dQP, eta, etap) -> np.ndarray:
    """The same bound with the sine ratio expanded to first order in ``eta``."""
    return ((1 - 2 * eta + eta * dQS**2) * dPS**2 - 2 * (eta - etap) * (dQS - dQP) * dQS
            + (etap - eta) ** 2 * dQS**2)


def _interpolant_distance(P, Q, S, eta, etap):
    Pe = S2.interpolate_batch(P, Q, etap)
    Se = S2.interpolate_batch(S, Q, eta)
    return sphere_dist(Pe, Se)


def check_interpolation_estimate(P, Q, S, eta, etap, linearized: bool = False) -> np.ndarray:
    """Margins ``rhs - d^2(P_eta', S_eta)`` without the cubic remainder."""
    P, Q, S = (np.atleast_2d(x) for x in (P, Q, S))
    P, Q, S = np.broadcast_arrays(P, Q, S)
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (len(P),))
    etap = np.broadcast_to(np.asarray(etap, dtype=float), (len(P),))
    lhs = _interpolant_distance(P, Q, S, eta, etap) ** 2
    f = linearized_rhs if linearized else interpolation_rhs
    return f(sphere_dist(P, S), sphere_dist(Q, S), sphere_dist(Q, P), eta, etap) - lhs


def sample_scale_family(rng, n: int, h: float, linearized: bool = False):
    """Triangles whose cubic-remainder arguments are all O(h).

    ``P`` and ``S`` lie within ``h/2`` of a base point at distance 0.8 from
    ``Q``.  For the exact bound ``eta`` is drawn from {0.3, 0.7} and
    ``eta' = eta + h U(-1, 1)``; for the linearized bound both fractions are
    ``h U(0, 1)`` so that the dropped ``Quad(eta, eta')`` term is also small.
    """
    Q = random_sphere(rng, n)
    e1, e2 = tangent_frame(Q)
    ang = rng.uniform(0, 2 * np.pi, n)[:, None]
    base = sphere_exp(Q, 0.8 * (np.cos(ang) * e1 + np.sin(ang) * e2))
    P = cap_points(rng, base, h / 2)
    S = cap_points(rng, base, h / 2)
    if linearized:
        eta = h * rng.uniform(0, 1, n)
        etap = h * rng.uniform(0, 1, n)
    else:
        eta = np.where(rng.uniform(0, 1, n) < 0.5, 0.3, 0.7)
        etap = np.clip(eta + h * rng.uniform(-1, 1, n), 0, 1)
    return P, Q, S, eta, etap


@dataclass
class ScaleFamilyResult:
    name: str
    hs: tuple
    envelope: tuple  # max |rhs - lhs| per h
    worst_negative: tuple
    slope: float
    cubic_constant: float  # smallest C with margin >= -C h^3 on all samples

    def row(self):
        return [self.name, ";".join(repr(h) for h in self.hs),
                ";".join(repr(e) for e in self.envelope), repr(self.slope), repr(self.cubic_constant)]


def scale_family(rng, samples: int, hs=(0.1, 0.05, 0.025), linearized: bool = False) -> ScaleFamilyResult:
    env, neg = [], []
    for h in hs:
        m = check_interpolation_estimate(*sample_scale_family(rng, samples, h, linearized),
                                         linearized=linearized)
        env.append(float(np.abs(m).max()))
        neg.append(float(min(m.min(), 0.0)))
    slope = float(np.polyfit(np.log(hs), np.log(env), 1)[0])
    C = max(-n / h**3 for n, h in zip(neg, hs))
    return ScaleFamilyResult("linearized" if linearized else "interpolation", tuple(hs), tuple(env),
                             tuple(neg), slope, float(C))


# ---------------------------------------------------------------------------
# Midpoint convexity


def midpoint_convexity_margins(P, Q, R) -> np.ndarray:
    P, Q, R = (np.atleast_2d(x) for x in (P, Q, R))
    P, Q, R = np.broadcast_arrays(P, Q, R)
    if np.any(sphere_dist(P, Q) >= np.pi / 2) or np.any(sphere_dist(P, R) >= np.pi / 2):
        raise ValueError("midpoint convexity needs d(P,Q), d(P,R) < pi/2")
    M = S2.interpolate_batch(Q, R, 0.5)
    dMP = sphere_dist(M, P)
    rhs = 0.5 * (sphere_dist(R, P) ** 2 + sphere_dist(Q, P) ** 2) - dMP**2
    lhs = np.cos(dMP) * sphere_dist(Q, R) ** 2 / 8.0
    return rhs - lhs


def check_midpoint_convexity(P, Q, R) -> float:
    return float(midpoint_convexity_margins(P, Q, R)[0])


def sample_midpoint_triples(rng, n: int):
    P = random_sphere(rng, n)
    return P, cap_points(rng, P, np.pi / 2 * (1 - 1e-9)), cap_points(rng, P, np.pi / 2 * (1 - 1e-9))


# ---------------------------------------------------------------------------
# Cone bounds


def cone_bound_margins(rng, n: int) -> dict:
    """Margins of the lift/projection bounds for random sphere pairs."""
    P = random_sphere(rng, n)
    Q = cap_points(rng, P, np.pi / 2 * (1 - 1e-9))
    d = sphere_dist(P, Q)
    ok = d > 1e-6
    D2 = cone_distance_raw(d, 1.0, 1.0) ** 2
    ratio = D2[ok] / d[ok] ** 2
    out = {
        "lift_lower": ratio - 0.5,
        "lift_upper": 1.0 - ratio,
        # ratio = 2(1 - cos d)/d^2 = 1 - d^2/12 + ..., so 1 - ratio <= d^2/12
        "lift_limit": d[ok] ** 2 / 12 - (1.0 - ratio),
        "lift_quartic": D2 - d**2 * (1 - d**2),
    }
    t = rng.uniform(0.5, 2.0, n)
    s = rng.uniform(0.5, 2.0, n)
    R = cap_points(rng, P, np.pi * (1 - 1e-9))
    dr = sphere_dist(P, R)
    full = cone_distance_raw(dr, t, s) ** 2
    proj = cone_distance_raw(dr, 1.0, 1.0) ** 2
    out["projection"] = full - s * t * proj
    # Four-point inequality in the (flat) cone over S^2.
    pts = [random_sphere(rng, n) for _ in range(4)]
    hts = [rng.uniform(0.0, 2.0, n) for _ in range(4)]

    def D(i, j):
        return cone_distance_raw(sphere_dist(pts[i], pts[j]), hts[i], hts[j])

    out["four_point"] = (D(0, 1) ** 2 + D(1, 2) ** 2 + D(2, 3) ** 2 + D(3, 0) ** 2
                         - D(0, 2) ** 2 - D(1, 3) ** 2)
    return out


# ---------------------------------------------------------------------------
# Full suite


ORACLE_NAMES = ("quadrilateral", "midpoint_convexity", "cat1_sphere", "cat1_tripod", "cone_bounds",
                "interpolation_scale", "linearized_scale")


def _rng(seed: int, idx: int):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(idx,)))


@dataclass
class OracleSuiteResult:
    reports: list
    sweep: QuadrilateralSweep | None
    scale: list

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)


def run_oracle_suite(seed: int = 0, samples: int = 100_000, adversarial: float = 0.0,
                     scale_samples: int | None = None) -> OracleSuiteResult:
    """All comparison checks.  ``adversarial`` is subtracted from every margin."""
    reports = []
    shift = float(adversarial)

    rng = _rng(seed, 0)
    sweep = quadrilateral_sweep(rng, samples)
    for i, e in enumerate(sweep.eps):
        th = sweep.thresholds[e]
        # violations counted at the threshold and every smaller delta0
        cols = [j for j, d in enumerate(sweep.deltas) if th is not None and d <= th]
        if shift:
            rng_a = _rng(seed, 100 + i)
            d0 = 1e-3
            excess = quadrilateral_excess(*sample_quadrilaterals(rng_a, samples, d0))
            rep = make_report("quadrilateral", e * d0**2 - excess - shift, {"eps0": e, "delta0": d0}, seed)
        else:
            v = int(sweep.violations[i, cols].sum()) if cols else samples
            w = float(sweep.worst[i, cols].min()) if cols else -math.inf
            rep = OracleReport("quadrilateral", samples * max(len(cols), 1) if samples else 0, v, w,
                               {"eps0": e, "delta0_threshold": th}, seed)
        reports.append(rep)

    rng = _rng(seed, 1)
    if samples:
        m = midpoint_convexity_margins(*sample_midpoint_triples(rng, samples))
    else:
        m = np.empty(0)
    reports.append(make_report("midpoint_convexity", m - shift, {}, seed))

    rng = _rng(seed, 2)
    if samples:
        P, Q, R = sample_cat1_sphere(rng, samples)
        t, s = rng.uniform(0, 1, samples), rng.uniform(0, 1, samples)
        m = cat1_margins(S2, P, Q, R, t, s)
    else:
        m = np.empty(0)
    reports.append(make_report("cat1_sphere", m - shift, {}, seed))

    rng = _rng(seed, 3)
    tri = Tree.tripod()
    if samples:
        P, Q, R = (random_tree_points(rng, tri, samples) for _ in range(3))
        t, s = rng.uniform(0, 1, samples), rng.uniform(0, 1, samples)
        m = cat1_margins(tri, P, Q, R, t, s)
    else:
        m = np.empty(0)
    reports.append(make_report("cat1_tripod", m - shift, {"leg": 1.0}, seed))

    rng = _rng(seed, 4)
    if samples:
        for name, mm in cone_bound_margins(rng, samples).items():
            reports.append(make_report("cone_" + name, mm - shift, {}, seed))
    else:
        reports.append(make_report("cone_bounds", np.empty(0), {}, seed))

    ss = samples if scale_samples is None else scale_samples
    scale = []
    if ss:
        scale.append(scale_family(_rng(seed, 5), ss))
        scale.append(scale_family(_rng(seed, 6), ss, linearized=True))
    return OracleSuiteResult(reports, sweep, scale)
