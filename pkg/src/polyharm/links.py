"""Links of skeleton points as metric graphs and their first eigenvalues.

A link is discretized into P1 elements; real-valued ``lambda_1`` is the
smallest nonzero generalized eigenvalue of stiffness against consistent mass.
For maps into the tripod (the tangent cone at a tree's branch point) the
Rayleigh quotient is minimized over sign/leg assignments and reported as an
upper bound.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra
from scipy.sparse.linalg import eigsh

from .domain import LocalModel, MetricField, metric_eval


@dataclass(frozen=True)
class LinkGraph:
    """Metric graph: ``edges = ((u, v, length), ...)``; loops are allowed."""

    nodes: int
    edges: tuple
    name: str = ""

    def __post_init__(self):
        if any(L <= 0 for _, _, L in self.edges):
            raise ValueError("link edge lengths must be positive")
        if not self.connected:
            raise ValueError("link graph is not connected")

    @property
    def connected(self) -> bool:
        parent = list(range(self.nodes))

        def find(x):
            while parent[x] != x:
                x = parent[x]
            return x

        for u, v, _ in self.edges:
            parent[find(u)] = find(v)
        return len({find(i) for i in range(self.nodes)}) == 1

    @property
    def total_length(self) -> float:
        return float(sum(L for _, _, L in self.edges))


def circle_link(length: float, name: str = "") -> LinkGraph:
    return LinkGraph(1, ((0, 0, float(length)),), name or f"circle({length:.6g})")


def theta_link(arcs: int, length: float = math.pi) -> LinkGraph:
    return LinkGraph(2, tuple((0, 1, float(length)) for _ in range(arcs)), f"theta({arcs})")


def _unit_angle_length(metric: MetricField | None, wedge: int, start: float, stop: float,
                       samples: int = 4096) -> float:
    """Length of the unit arc from ``start`` to ``stop`` under ``g(0)``."""
    if metric is None:
        return stop - start
    phi = start + (np.arange(samples) + 0.5) * (stop - start) / samples
    x = np.zeros((samples, 2))
    t = np.column_stack([-np.sin(phi), np.cos(phi)])
    g = metric_eval(metric, wedge, x).g
    speed = np.sqrt(np.einsum("ni,nij,nj->n", t, g, t))
    return float(speed.sum() * (stop - start) / samples)


def extract_link(model: LocalModel, point: str = "vertex", metric: MetricField | None = None) -> LinkGraph:
    """Link at the origin (``vertex``), a spine point, or a regular point."""
    if model.n != 2:
        raise NotImplementedError("links of 3-dimensional models are spherical complexes; not supported")
    if point == "regular":
        return circle_link(2 * math.pi, "regular")
    if model.kind == "cone":
        if point != "vertex":
            raise ValueError("cone links are taken at the vertex")
        L = sum(_unit_angle_length(metric, w, wd.start, wd.stop) for w, wd in enumerate(model.wedges))
        return circle_link(L)
    if model.kind == "book":
        if point not in ("vertex", "spine"):
            raise ValueError(point)
        pages = len(model.wedges)
        if pages == 1:
            return LinkGraph(2, ((0, 1, _unit_angle_length(metric, 0, 0.0, math.pi)),), "half-circle")
        lens = [_unit_angle_length(metric, w, wd.start, wd.stop) for w, wd in enumerate(model.wedges)]
        if metric is None:
            return theta_link(pages)
        return LinkGraph(2, tuple((0, 1, L) for L in lens), f"theta({pages})")
    if model.kind == "wedge":
        return LinkGraph(2, ((0, 1, model.total_angle),), "arc")
    raise ValueError(f"no link for model kind {model.kind!r}")


# ---------------------------------------------------------------------------
# Discretization


@dataclass(frozen=True)
class DiscreteLink:
    nodes: int
    segments: np.ndarray  # (M, 2) node ids
    lengths: np.ndarray  # (M,)
    coords: np.ndarray  # (nodes,) arclength position along the owning edge (for output)

    def stiffness(self) -> sp.csr_matrix:
        return self._assemble(np.array([[1.0, -1.0], [-1.0, 1.0]]), 1.0 / self.lengths)

    def mass(self) -> sp.csr_matrix:
        return self._assemble(np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0, self.lengths)

    def _assemble(self, local, scale):
        s = self.segments
        r = np.concatenate([s[:, 0], s[:, 0], s[:, 1], s[:, 1]])
        c = np.concatenate([s[:, 0], s[:, 1], s[:, 0], s[:, 1]])
        v = np.concatenate([local[0, 0] * scale, local[0, 1] * scale, local[1, 0] * scale, local[1, 1] * scale])
        return sp.coo_matrix((v, (r, c)), shape=(self.nodes, self.nodes)).tocsr()


def discretize(link: LinkGraph, subdivision: int) -> DiscreteLink:
    """Split every edge into ``max(3, ceil(subdivision * length))`` equal segments."""
    nid = link.nodes
    segs, lens, coords = [], [], [0.0] * link.nodes
    for u, v, L in link.edges:
        m = max(3, math.ceil(subdivision * L - 1e-9))
        chain = [u] + list(range(nid, nid + m - 1)) + [v]
        coords += [L * j / m for j in range(1, m)]
        nid += m - 1
        for a, b in zip(chain[:-1], chain[1:]):
            segs.append((a, b))
            lens.append(L / m)
    return DiscreteLink(nid, np.array(segs), np.array(lens), np.array(coords))


# ---------------------------------------------------------------------------
# Eigenvalues


@dataclass
class EigenResult:
    link: str
    target: str
    subdivision: int
    lam1: float
    trend: list = field(default_factory=list)
    eigenfunction: np.ndarray | None = None
    spread: float = 0.0
    converged: bool = True

    @property
    def monotone(self) -> bool:
        return all(b <= a * (1 + 1e-9) for a, b in zip(self.trend, self.trend[1:]))

    def row(self, predicted=None):
        return [self.link, self.target, self.subdivision, repr(self.lam1),
                ";".join(repr(t) for t in self.trend), "" if predicted is None else repr(predicted)]


EIGEN_HEADER = ["link", "target", "subdivision", "lambda1", "trend", "predicted_alpha"]


def _real_lambda1(dl: DiscreteLink):
    K = dl.stiffness().tocsc()
    M = dl.mass().tocsc()
    v0 = np.cos(np.arange(dl.nodes) * 0.7311) + 0.1
    k = min(3, dl.nodes - 1)
    vals, vecs = eigsh(K, k=k, M=M, sigma=-1e-2, which="LM", v0=v0)
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    scale = max(1.0, abs(vals).max())
    j = int(np.argmax(vals > 1e-8 * scale))
    return float(vals[j]), vecs[:, j]


def lambda1(link: LinkGraph, target: str = "real", subdivision: int = 512, restarts: int = 50,
            seed: int = 0, levels: int = 3) -> EigenResult:
    """First eigenvalue of the link for real- or tripod-valued maps.

    ``trend`` holds estimates at ``subdivision / 2^j`` for ``j = levels-1 .. 0``
    (coarse to fine); they are variational upper bounds and should not
    increase.
    """
    if subdivision < 16:
        raise ValueError("subdivision must be at least 16 per unit length")
    subs = [max(16, subdivision // 2**j) for j in range(levels - 1, -1, -1)]
    subs = sorted(set(subs))
    trend, last = [], None
    for s in subs:
        dl = discretize(link, s)
        if target == "real":
            lam, vec = _real_lambda1(dl)
            last = (lam, vec, 0.0, True)
        elif target == "tripod":
            last = _tripod_lambda1(dl, restarts, seed)
        else:
            raise ValueError(f"unknown eigen target {target!r}")
        trend.append(last[0])
    lam, vec, spread, ok = last
    return EigenResult(link.name, target, subs[-1], lam, trend, vec, spread, ok)


# -- tripod-valued maps ---------------------------------------------------


def _piece_integral(a, b):
    """``int_0^1 (a + (b - a) t)^2 dt``."""
    return (a * a + a * b + b * b) / 3.0


def tripod_quotient(dl: DiscreteLink, leg: np.ndarray, s: np.ndarray):
    """Exact Rayleigh quotient of the geodesic PL map ``node -> (leg, s)``.

    Returns ``(quotient, mean_leg, mean_offset)``; the denominator uses the
    exact tree Frechet mean of the map.
    """
    a, b = dl.segments[:, 0], dl.segments[:, 1]
    ell = dl.lengths
    same = (leg[a] == leg[b]) | (s[a] == 0) | (s[b] == 0)
    d = np.where(same, np.abs(s[a] - s[b]), s[a] + s[b])
    energy = float(np.sum(d * d / ell))
    total = float(ell.sum())

    def line_values(k):
        # coordinate of each endpoint on the line through leg k: + on leg k, - elsewhere
        ca = np.where(leg[a] == k, s[a], -s[a])
        cb = np.where(leg[b] == k, s[b], -s[b])
        return ca, cb

    best = (math.inf, 0, 0.0)
    for k in range(3):
        ca, cb = line_values(k)
        # segments crossing O on the way between two other legs fold at O
        fold = ~same & (leg[a] != k) & (leg[b] != k)
        # integral of the line coordinate c(x) and of c^2 along each segment
        lin = np.where(fold, -(s[a] ** 2 + s[b] ** 2) / (2 * np.where(d > 0, d, 1.0)), 0.5 * (ca + cb))
        mean_c = float(np.sum(ell * lin)) / total
        off = max(mean_c, 0.0)
        sq = np.where(
            fold,
            (s[a] ** 3 + s[b] ** 3) / (3 * np.where(d > 0, d, 1.0)) + off * (s[a] ** 2 + s[b] ** 2)
            / np.where(d > 0, d, 1.0) + off * off,
            _piece_integral(ca - off, cb - off),
        )
        den = float(np.sum(ell * sq))
        if den < best[0]:
            best = (den, k, off)
    den, k, off = best
    q = energy / den if den > 0 else math.inf
    return q, k, off


def _signed_matrices(dl: DiscreteLink, leg: np.ndarray):
    a, b = dl.segments[:, 0], dl.segments[:, 1]
    ell = dl.lengths
    sign = np.where(leg[a] == leg[b], 1.0, -1.0)
    n = dl.nodes
    r = np.concatenate([a, a, b, b])
    c = np.concatenate([a, b, a, b])
    K = sp.coo_matrix((np.concatenate([1 / ell, -sign / ell, -sign / ell, 1 / ell]), (r, c)), shape=(n, n))
    M = sp.coo_matrix((np.concatenate([ell / 3, sign * ell / 6, sign * ell / 6, ell / 3]), (r, c)), shape=(n, n))
    return K.tocsc(), M.tocsc()


def _smallest(K, M, v0):
    vals, vecs = eigsh(K, k=1, M=M, sigma=-1e-2, which="LM", v0=v0)
    return float(vals[0]), vecs[:, 0]


def _tripod_lambda1(dl: DiscreteLink, restarts: int, seed: int):
    rng = np.random.default_rng(seed)
    cands = []
    # the real eigenfunction folded onto two legs
    lam_r, vec = _real_lambda1(dl)
    leg0 = np.where(vec >= 0, 0, 1)
    cands.append(tripod_quotient(dl, leg0, np.abs(vec))[0])
    A = sp.coo_matrix((dl.lengths, (dl.segments[:, 0], dl.segments[:, 1])), shape=(dl.nodes, dl.nodes))
    A = (A + A.T).tocsr()
    converged = True
    for _ in range(restarts):
        seeds = rng.choice(dl.nodes, size=3, replace=False)
        dist = dijkstra(A, indices=seeds)
        leg = np.argmin(dist, axis=0)
        s = np.maximum(dist.min(axis=0) * 0 + 1.0, 0)
        prev = None
        best = math.inf
        for it in range(30):
            K, M = _signed_matrices(dl, leg)
            try:
                _, v = _smallest(K, M, s + 0.01)
            except Exception:
                converged = False
                break
            if v.sum() < 0:
                v = -v
            neg = v < 0
            # a negative value means the node prefers another leg: move it to
            # the leg of its strongest neighbour off the current leg
            if np.any(neg):
                new_leg = leg.copy()
                for i in np.nonzero(neg)[0]:
                    lo, hi = A.indptr[i], A.indptr[i + 1]
                    nb = A.indices[lo:hi]
                    others = [leg[j] for j in nb if leg[j] != leg[i]]
                    new_leg[i] = others[0] if others else (leg[i] + 1 + rng.integers(0, 2)) % 3
                leg = new_leg
            s = np.abs(v)
            q = tripod_quotient(dl, leg, s)[0]
            best = min(best, q)
            key = leg.tobytes()
            if key == prev:
                break
            prev = key
        cands.append(best)
    cands = np.array([c for c in cands if np.isfinite(c)])
    return float(cands.min()), None, float(cands.max() - cands.min()), converged


# ---------------------------------------------------------------------------
# Exponent prediction


@dataclass(frozen=True)
class ExponentPrediction:
    alpha: float
    lipschitz: bool


def predicted_exponent(beta: float, n: int = 2, k: int = 0) -> ExponentPrediction:
    """Positive root of ``a (a + n - k - 2) = beta``; Lipschitz when ``beta >= n-k-1``."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    c = n - k - 2
    alpha = (-c + math.sqrt(c * c + 4 * beta)) / 2
    return ExponentPrediction(alpha, beta >= n - k - 1)


def eigen_csv(results, predicted=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EIGEN_HEADER)
    for r in results:
        w.writerow(r.row(predicted))
    return buf.getvalue()
