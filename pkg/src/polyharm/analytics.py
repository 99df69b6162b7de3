"""Regularity diagnostics for solved maps.

``E(sigma)`` is the energy inside ``B(sigma)``, ``I(sigma, Q)`` the boundary
integral of ``d^2(u, Q)`` and ``alpha(sigma) = sigma E / I`` the order.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .domain import Mesh, MeshResolutionError, MetricField, PointLocator, ball_and_sphere, ball_fractions
from .domain import local_mesh_size, sphere_sample
from .energy import Stiffness, simplex_energies, stiffness
from .targets import Arc, Euclidean, Sphere, TargetSpace, sphere_exp, sphere_log


# ---------------------------------------------------------------------------
# Evaluating a PL map at arbitrary points


def evaluate(space: TargetSpace, values: np.ndarray, simplices: np.ndarray, sid, bary) -> np.ndarray:
    """Values of the PL map at points with barycentric coordinates ``bary``.

    Linear for Euclidean and arc targets, the weighted Frechet mean of the
    simplex's vertex values otherwise.
    """
    V = values[simplices[sid]]  # (M, n+1, k)
    if isinstance(space, (Euclidean, Arc)):
        return np.einsum("mv,mvk->mk", bary, V)
    if isinstance(space, Sphere):
        x = np.einsum("mv,mvk->mk", bary, V)
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        for _ in range(100):
            step = np.zeros_like(x)
            for j in range(V.shape[1]):
                step += bary[:, j:j + 1] * sphere_log(x, V[:, j])
            x = sphere_exp(x, step)
            if np.abs(step).max() < 1e-15:
                break
        return x
    return np.array([space.frechet_mean(V[m], bary[m]) for m in range(len(V))])


# ---------------------------------------------------------------------------
# Radial quantities


def energy_profile(mesh: Mesh, space: TargetSpace, values: np.ndarray, radii,
                   metric: MetricField | None = None, center=None, stiff: Stiffness | None = None,
                   min_cells: float = 8.0) -> np.ndarray:
    """``E(sigma)`` for each radius by clipping simplex energies to the ball."""
    stiff = stiff or stiffness(mesh, metric)
    e = simplex_energies(mesh, space, values, stiff)
    out = []
    for s in np.atleast_1d(radii):
        hloc = local_mesh_size(mesh, s, center)
        if s / hloc < min_cells:
            raise MeshResolutionError(f"sigma={s:g} spans only {s / hloc:.1f} cells (need {min_cells})")
        out.append(float(np.dot(ball_fractions(mesh, s, center), e)))
    return np.array(out)


@dataclass
class BoundaryMoment:
    sigma: float
    I: float
    center: np.ndarray
    sample_values: np.ndarray
    weights: np.ndarray


def boundary_moment(mesh: Mesh, space: TargetSpace, values: np.ndarray, sigma: float, Q=None,
                    metric: MetricField | None = None, resolution: int = 2048, center=None,
                    locator: PointLocator | None = None) -> BoundaryMoment:
    """``I(sigma, Q)`` by angular quadrature; ``Q`` defaults to the optimal center."""
    samp = sphere_sample(mesh, sigma, metric, resolution, locator, center)
    vals = evaluate(space, values, mesh.simplices, samp.simplex, samp.bary)
    q = optimal_center(space, vals, samp.weights) if Q is None else space.point(Q)
    d = space.distances(np.broadcast_to(q, vals.shape), vals)
    return BoundaryMoment(float(sigma), float(np.sum(samp.weights * d * d)), q, vals, samp.weights)


def optimal_center(space: TargetSpace, sample_values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return space.frechet_mean(sample_values, weights, tol=1e-14)


@dataclass
class RadialProfile:
    sigma: np.ndarray
    E: np.ndarray
    I: np.ndarray
    centers: np.ndarray
    n: int = 2

    def __post_init__(self):
        if np.any(np.diff(self.sigma) <= 0):
            raise ValueError("profile radii must be strictly increasing")

    @property
    def alpha(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.I > 0, self.sigma * self.E / np.where(self.I > 0, self.I, 1.0), np.inf)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        k = self.centers.shape[1]
        w.writerow(["sigma", "E", "I", "alpha"] + [f"Q{j}" for j in range(k)])
        for s, e, i, a, q in zip(self.sigma, self.E, self.I, self.alpha, self.centers):
            w.writerow([repr(float(s)), repr(float(e)), repr(float(i)), repr(float(a))]
                       + [repr(float(c)) for c in q])
        return buf.getvalue()


def octave_radii(sigma_max: float, octaves: int, per_octave: int = 1) -> np.ndarray:
    """Log-spaced radii ``sigma_max 2^{-j/per_octave}`` in increasing order."""
    j = np.arange(octaves * per_octave, -1, -1)
    return sigma_max * 2.0 ** (-j / per_octave)


def radial_profile(mesh: Mesh, space: TargetSpace, values: np.ndarray, radii,
                   metric: MetricField | None = None, resolution: int = 2048, center=None,
                   min_cells: float = 8.0) -> RadialProfile:
    radii = np.asarray(radii, dtype=float)
    stiff = stiffness(mesh, metric)
    E = energy_profile(mesh, space, values, radii, metric, center, stiff, min_cells)
    loc = PointLocator(mesh)
    Is, Qs = [], []
    for s in radii:
        bm = boundary_moment(mesh, space, values, s, None, metric, resolution, center, loc)
        Is.append(bm.I)
        Qs.append(bm.center)
    return RadialProfile(radii, E, np.array(Is), np.array(Qs), mesh.n)


@dataclass
class OrderEstimate:
    alpha: np.ndarray
    limit: float
    uncertainty: float
    rate: float | None
    infinite: bool = False


def order_profile(profile: RadialProfile) -> OrderEstimate:
    """Order values and a Richardson estimate of the small-radius limit.

    Uses the three smallest radii (assumed octave spaced): with
    ``alpha(sigma) ~ alpha + c sigma^p`` the observed rate ``p`` is estimated
    from the two differences (falling back to ``p = 1``).  The uncertainty is
    the size of the extrapolation step.
    """
    a = profile.alpha
    if not np.all(np.isfinite(a)):
        return OrderEstimate(a, math.inf, math.inf, None, True)
    if len(a) < 2:
        return OrderEstimate(a, float(a[0]), math.inf, None)
    s = profile.sigma
    ratio = s[1] / s[0]
    p = None
    if len(a) >= 3:
        d1, d2 = a[1] - a[0], a[2] - a[1]
        if d1 != 0 and d2 / d1 > 1.0 + 1e-9:
            p = math.log(d2 / d1) / math.log(ratio)
    pe = p if p is not None and 0.25 <= p <= 4 else 1.0
    f = ratio**pe
    limit = a[0] - (a[1] - a[0]) / (f - 1.0)
    return OrderEstimate(a, float(limit), float(abs(limit - a[0])), p)


def monotonicity_check(profile: RadialProfile, q: float) -> float:
    """Largest relative decrease per octave of ``E(sigma) / sigma^q``."""
    R = profile.E / profile.sigma**q
    worst = 0.0
    for j in range(len(R) - 1):
        octs = math.log2(profile.sigma[j + 1] / profile.sigma[j])
        if R[j] <= 0:
            continue
        r = R[j + 1] / R[j]
        dec = 1.0 - r ** (1.0 / octs) if r < 1 else 0.0
        worst = max(worst, dec)
    return float(worst)


# ---------------------------------------------------------------------------
# Hoelder fits


@dataclass
class HolderFit:
    exponent: float
    constant: float
    residual: float
    pairs: int
    policy: str
    bins: int
    degenerate: bool = False

    def row(self):
        return [repr(self.exponent), repr(self.constant), repr(self.residual), self.pairs, self.policy, self.bins]


HOLDER_HEADER = ["exponent", "constant", "residual", "pairs", "policy", "bins"]


def holder_fit(mesh: Mesh, space: TargetSpace, values: np.ndarray, region: float = 0.5,
               pairs: int = 20000, policy: str = "random", bins: int = 12, seed: int = 0,
               sep_range=(None, None), anchor: int | None = None) -> HolderFit:
    """Fit ``d(u(x), u(y)) <= C |x - y|^gamma`` by the upper envelope.

    Vertices with ``|x| <= region * r`` are used.  ``policy`` is ``random``
    (uniform vertex pairs) or ``anchored`` (each pair contains the ``anchor``
    vertex, by default the one closest to the origin).  Pair separations are
    intrinsic model distances; they are binned in log scale and the per-bin
    maxima are regressed.
    """
    rad = np.linalg.norm(mesh.points, axis=1)
    idx = np.nonzero(rad <= region * mesh.r)[0]
    rng = np.random.default_rng(seed)
    if policy == "random":
        a = idx[rng.integers(0, len(idx), pairs)]
        b = idx[rng.integers(0, len(idx), pairs)]
    elif policy == "anchored":
        anc = int(np.argmin(rad)) if anchor is None else anchor
        a = np.full(len(idx), anc)
        b = idx
    else:
        raise ValueError(f"unknown pair policy {policy!r}")
    keep = a != b
    a, b = a[keep], b[keep]
    if len(a) < 1000 and policy == "random":
        raise ValueError("need at least 10^3 sample pairs")
    m = mesh.model
    sep = m.distance(mesh.home[a], mesh.points[a], mesh.home[b], mesh.points[b])
    dv = space.distances(values[a], values[b])
    lo = sep_range[0] if sep_range[0] is not None else 4 * mesh.h
    hi = sep_range[1] if sep_range[1] is not None else region * mesh.r
    ok = (sep >= lo) & (sep <= hi) & (sep > 0)
    sep, dv = sep[ok], dv[ok]
    if len(sep) == 0 or not np.any(dv > 0):
        return HolderFit(math.nan, math.nan, math.nan, int(len(a)), policy, bins, True)
    edges = np.linspace(np.log(lo), np.log(hi), bins + 1)
    which = np.clip(np.digitize(np.log(sep), edges) - 1, 0, bins - 1)
    xs, ys = [], []
    for k in range(bins):
        sel = np.nonzero(which == k)[0]
        if len(sel) == 0:
            continue
        j = sel[np.argmax(dv[sel])]
        if dv[j] > 0:
            xs.append(math.log(sep[j]))
            ys.append(math.log(dv[j]))
    if len(xs) < 2:
        return HolderFit(math.nan, math.nan, math.nan, int(len(a)), policy, bins, True)
    slope, icpt = np.polyfit(xs, ys, 1)
    res = float(np.sqrt(np.mean((np.polyval([slope, icpt], xs) - np.array(ys)) ** 2)))
    return HolderFit(float(slope), float(math.exp(icpt)), res, int(len(a)), policy, bins)


# ---------------------------------------------------------------------------
# Blow-ups


@dataclass
class BlowUpFrame:
    lam: float
    mu: float
    I: float
    n: int
    radii: np.ndarray  # grid radii in (0, 1]
    angles: np.ndarray  # (A,) planar angles, with wedge ids
    wedges: np.ndarray
    dist_to_center: np.ndarray  # (len(radii), A): d_lambda(f_lambda(x), f_lambda(0))
    degenerate: bool = False  # the map is constant on the sphere; mu is reported as 0

    def mu_consistent(self, tol: float = 1e-10) -> bool:
        return abs(self.mu - math.sqrt(self.lam ** (1 - self.n) * self.I)) <= tol * max(1.0, self.mu)


def _polar_grid(mesh: Mesh, radii, per_wedge: int):
    ws, phis = [], []
    for w, wd in enumerate(mesh.model.wedges):
        ph = wd.start + (np.arange(per_wedge) + 0.5) * wd.angle / per_wedge
        ws.append(np.full(per_wedge, w))
        phis.append(ph)
    return np.concatenate(ws), np.concatenate(phis)


def blow_up(mesh: Mesh, space: TargetSpace, values: np.ndarray, lam: float,
            metric: MetricField | None = None, radii=None, per_wedge: int = 24,
            resolution: int = 2048, locator: PointLocator | None = None) -> BlowUpFrame:
    """The ``lam``-blow-up at the origin sampled on a polar grid of the unit ball.

    ``mu = (lam^{1-n} I(lam, Q_lam))^{1/2}``; distances of the blow-up are
    target distances divided by ``mu``.
    """
    if mesh.n != 2:
        raise ValueError("blow-up frames are sampled on 2-dimensional models")
    radii = np.linspace(0.25, 1.0, 7) if radii is None else np.asarray(radii, dtype=float)
    if lam * radii.max() >= mesh.r:
        raise ValueError("blow-up scale exceeds the mesh ball")
    loc = locator or PointLocator(mesh)
    bm = boundary_moment(mesh, space, values, lam, None, metric, resolution, None, loc)
    mu = math.sqrt(lam ** (1 - mesh.n) * bm.I)
    ws, phis = _polar_grid(mesh, radii, per_wedge)
    origin = int(np.argmin(np.linalg.norm(mesh.points, axis=1)))
    f0 = values[origin]
    R, P = np.meshgrid(radii, phis, indexing="ij")
    W = np.broadcast_to(ws, R.shape)
    pts = lam * np.stack([R * np.cos(P), R * np.sin(P)], axis=-1).reshape(-1, 2)
    hloc = local_mesh_size(mesh, lam * radii.min())
    if lam * radii.min() / hloc < 2:
        raise MeshResolutionError(f"blow-up scale {lam:g} is not resolved by the mesh")
    sid, bary = loc.locate(W.ravel(), pts)
    vals = evaluate(space, values, mesh.simplices, sid, bary)
    d = space.distances(np.broadcast_to(f0, vals.shape), vals).reshape(R.shape)
    # rms deviation of the trace on the sphere below roundoff: constant map
    if math.sqrt(bm.I / bm.weights.sum()) <= 1e-12:
        return BlowUpFrame(lam, 0.0, bm.I, mesh.n, radii, phis, ws, np.full(R.shape, np.nan), True)
    return BlowUpFrame(lam, mu, bm.I, mesh.n, radii, phis, ws, d / mu)


def homogeneity_deviation(frame: BlowUpFrame, alpha: float) -> float:
    """``max |d_l(f_l(x), f_l(0)) - |x|^alpha d_l(f_l(x/|x|), f_l(0))|`` over the grid."""
    if frame.degenerate:
        return math.nan
    j1 = int(np.argmax(frame.radii))
    if frame.radii[j1] != 1.0:
        raise ValueError("the grid must contain the unit radius")
    unit = frame.dist_to_center[j1]
    pred = frame.radii[:, None] ** alpha * unit[None, :]
    return float(np.abs(frame.dist_to_center - pred).max())


def homogeneity_check(frames, alpha: float) -> list:
    return [homogeneity_deviation(f, alpha) for f in frames]


__all__ = [
    "BlowUpFrame", "BoundaryMoment", "HolderFit", "OrderEstimate", "RadialProfile", "ball_and_sphere",
    "blow_up", "boundary_moment", "energy_profile", "evaluate", "holder_fit", "homogeneity_check",
    "homogeneity_deviation", "monotonicity_check", "octave_radii", "optimal_center", "order_profile",
    "radial_profile",
]
