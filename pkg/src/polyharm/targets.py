"""Geodesic target spaces: spheres, arcs, metric trees and Euclidean space.

Points are stored as float arrays so that whole maps can be held in a single
``(N, k)`` array:

* ``Sphere(m)``: unit vectors in R^{m+1}, ``k = m + 1``
* ``Arc(L)``: arclength coordinate in [0, L], ``k = 1``
* ``Euclidean(m)``: ``k = m``
* ``Tree``: ``(edge id, offset from the edge's first node)``, ``k = 2``

Single points may be passed in their natural form (a float for an arc, a tuple
for a tree); ``space.point(...)`` converts.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

PI_4 = np.pi / 4


class GeodesicError(ValueError):
    """Raised when a geodesic is not unique or does not exist."""


class FrechetMeanError(ValueError):
    """Raised when a center of mass is not well defined."""


@dataclass(frozen=True)
class BallConstraint:
    """Closed ball ``B_tau(center)`` that maps are required to stay in."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        if not (0.0 < self.radius < PI_4):
            raise ValueError(
                f"ball radius tau={self.radius!r} violates 0 < tau < pi/4"
            )
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))


class TargetSpace:
    """Common interface. Subclasses implement the batch primitives."""

    kind: str = "abstract"
    curvature: str = "CAT1"
    coord_dim: int = 1

    # -- conversion -----------------------------------------------------
    def point(self, p) -> np.ndarray:
        p = np.atleast_1d(np.asarray(p, dtype=float))
        if p.shape != (self.coord_dim,):
            raise ValueError(
                f"{self.kind}: expected a point with {self.coord_dim} coordinates, got shape {p.shape}"
            )
        self.check(p[None, :])
        return p

    def batch(self, pts) -> np.ndarray:
        a = np.asarray(pts, dtype=float)
        if a.ndim == 1 and self.coord_dim == 1:
            a = a[:, None]
        if a.ndim != 2 or a.shape[1] != self.coord_dim:
            raise ValueError(
                f"{self.kind}: expected points of shape (N, {self.coord_dim}), got {a.shape}"
            )
        return a

    def check(self, pts: np.ndarray) -> None:
        """Raise if any row of ``pts`` is not a point of the space."""

    # -- batch primitives -------------------------------------------------
    def distances(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def interpolate_batch(self, a: np.ndarray, b: np.ndarray, t) -> np.ndarray:
        raise NotImplementedError

    # -- single-point API ---------------------------------------------------
    def distance(self, p, q) -> float:
        return float(self.distances(self.point(p)[None], self.point(q)[None])[0])

    def interpolate(self, p, q, t: float) -> np.ndarray:
        if not (0.0 <= t <= 1.0):
            raise ValueError(f"interpolation fraction {t} outside [0, 1]")
        return self.interpolate_batch(self.point(p)[None], self.point(q)[None], t)[0]

    def project_to_ball(self, p, ball: BallConstraint) -> np.ndarray:
        return self.project_batch(self.point(p)[None], ball)[0]

    def project_batch(self, pts: np.ndarray, ball: BallConstraint) -> np.ndarray:
        pts = self.batch(pts)
        c = np.broadcast_to(self.point(ball.center), pts.shape)
        d = self.distances(c, pts)
        out = pts.copy()
        far = d > ball.radius
        if np.any(far):
            t = ball.radius / d[far]
            out[far] = self.interpolate_batch(c[far], pts[far], t)
        return out

    def frechet_mean(self, points, weights=None, tol: float = 1e-10,
                     max_iter: int = 10_000, ball: BallConstraint | None = None) -> np.ndarray:
        """Minimizer of ``sum_i w_i d^2(., P_i)``."""
        pts = self.batch(points)
        self.check(pts)
        w = _check_weights(weights, len(pts))
        keep = w > 0
        pts, w = pts[keep], w[keep]
        if len(pts) == 1 or np.all(pts == pts[0]):
            return pts[0].copy()
        return self._frechet_mean(pts, w, tol, max_iter, ball)

    def _frechet_mean(self, pts, w, tol, max_iter, ball):
        # Inductive mean: repeated two-point averaging against the iterate.
        x = pts[np.argmax(w)].copy()
        acc = 0.0
        order = np.argsort(-w, kind="stable")
        for it in range(max_iter):
            move = 0.0
            for i in order:
                acc_new = acc + w[i]
                y = self.interpolate_batch(x[None], pts[i][None], w[i] / acc_new)[0]
                move = max(move, float(self.distances(x[None], y[None])[0]))
                x, acc = y, acc_new
            if it > 0 and move < tol:
                break
        return x

    def objective(self, x, pts, w) -> float:
        pts = self.batch(pts)
        d = self.distances(np.broadcast_to(self.point(x), pts.shape), pts)
        return float(np.sum(np.asarray(w, dtype=float) * d * d))


def _check_weights(weights, n: int) -> np.ndarray:
    if n == 0:
        raise FrechetMeanError("empty point set")
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.shape != (n,):
        raise ValueError(f"expected {n} weights, got {w.shape}")
    if np.any(w < 0) or not np.any(w > 0):
        raise FrechetMeanError("weights must be nonnegative and not all zero")
    return w


# ---------------------------------------------------------------------------
# Euclidean space and arcs


@dataclass(frozen=True)
class Euclidean(TargetSpace):
    m: int = 1
    kind: str = field(default="euclidean", init=False)
    curvature: str = field(default="NPC", init=False)

    @property
    def coord_dim(self) -> int:
        return self.m

    def check(self, pts):
        if not np.all(np.isfinite(pts)):
            raise ValueError("euclidean: non-finite coordinates")

    def distances(self, a, b):
        return np.linalg.norm(np.asarray(a) - np.asarray(b), axis=-1)

    def interpolate_batch(self, a, b, t):
        t = np.asarray(t, dtype=float)
        if t.ndim == 1:
            t = t[:, None]
        return (1.0 - t) * a + t * b

    def _frechet_mean(self, pts, w, tol, max_iter, ball):
        return (w[:, None] * pts).sum(axis=0) / w.sum()


@dataclass(frozen=True)
class Arc(TargetSpace):
    """Geodesic arc of length ``L`` parametrized by arclength."""

    length: float = 1.0
    kind: str = field(default="arc", init=False)
    curvature: str = field(default="NPC", init=False)
    coord_dim: int = field(default=1, init=False)

    def __post_init__(self):
        if not (0.0 < self.length < np.pi):
            raise ValueError(f"arc length must lie in (0, pi), got {self.length}")

    def check(self, pts):
        x = pts[:, 0]
        if np.any(x < -1e-12) or np.any(x > self.length + 1e-12):
            raise ValueError(f"arc: coordinate outside [0, {self.length}]")

    def distances(self, a, b):
        return np.abs(np.asarray(a)[..., 0] - np.asarray(b)[..., 0])

    def interpolate_batch(self, a, b, t):
        t = np.asarray(t, dtype=float)
        if t.ndim == 1:
            t = t[:, None]
        return (1.0 - t) * a + t * b

    def _frechet_mean(self, pts, w, tol, max_iter, ball):
        return (w[:, None] * pts).sum(axis=0) / w.sum()

    def embed(self, x) -> np.ndarray:
        """The arc as the equatorial great-circle segment of S^2."""
        x = np.asarray(x, dtype=float)
        return np.stack([np.cos(x), np.sin(x), np.zeros_like(x)], axis=-1)


# ---------------------------------------------------------------------------
# Spheres


def sphere_dist(a, b):
    """Great-circle distance, ``2 atan2(|a-b|, |a+b|)``.

    Equal to ``arccos(<a, b>)`` but accurate for nearby points, where arccos
    loses half the significant digits.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    return 2.0 * np.arctan2(np.linalg.norm(a - b, axis=-1), np.linalg.norm(a + b, axis=-1))


def sphere_log(x, u):
    """Log map at ``x`` (batch over leading axis)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    th = sphere_dist(x, u)
    v = u - np.sum(x * u, axis=-1, keepdims=True) * x
    nv = np.linalg.norm(v, axis=-1, keepdims=True)
    scale = np.where(nv > 0, th[..., None] / np.where(nv > 0, nv, 1.0), 0.0)
    return v * scale


def sphere_exp(x, v):
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    nv = np.linalg.norm(v, axis=-1, keepdims=True)
    sinc = np.where(nv > 0, np.sin(nv) / np.where(nv > 0, nv, 1.0), 1.0)
    y = np.cos(nv) * x + sinc * v
    return y / np.linalg.norm(y, axis=-1, keepdims=True)


@dataclass(frozen=True)
class Sphere(TargetSpace):
    """Unit sphere S^m in R^{m+1}."""

    m: int = 2
    kind: str = field(default="sphere", init=False)
    curvature: str = field(default="CAT1", init=False)
    antipodal_tol: float = 1e-9

    @property
    def coord_dim(self) -> int:
        return self.m + 1

    def normalize(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return v / np.linalg.norm(v, axis=-1, keepdims=True)

    def check(self, pts):
        nrm = np.linalg.norm(pts, axis=-1)
        if np.any(np.abs(nrm - 1.0) > 1e-12):
            raise ValueError("sphere: point is not a unit vector (|norm - 1| > 1e-12)")

    def distances(self, a, b):
        return sphere_dist(a, b)

    def interpolate_batch(self, a, b, t):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        t = np.asarray(t, dtype=float)
        if t.ndim == 1:
            t = t[:, None]
        w = sphere_dist(a, b)
        if np.any(w > np.pi - self.antipodal_tol):
            raise GeodesicError("sphere: antipodal points have no unique geodesic")
        w = w[..., None]
        s = np.sin(w)
        small = w < 1e-8
        safe_s = np.where(small, 1.0, s)
        y = np.where(
            small,
            (1.0 - t) * a + t * b,
            (np.sin((1.0 - t) * w) * a + np.sin(t * w) * b) / safe_s,
        )
        return y / np.linalg.norm(y, axis=-1, keepdims=True)

    def enclosing_radius(self, pts: np.ndarray, hint=None) -> tuple[np.ndarray, float]:
        """Approximate minimal enclosing cap (center, radius) of ``pts``.

        Badoiu-Clarkson iteration; the returned radius is an upper bound
        for the cap it describes.
        """
        cands = [self.normalize(pts.mean(axis=0)) if np.linalg.norm(pts.mean(axis=0)) > 1e-12 else pts[0]]
        if hint is not None:
            cands.append(np.asarray(hint, dtype=float))
        best_c, best_r = None, np.inf
        for c in cands:
            for k in range(1, 60):
                d = sphere_dist(c[None], pts)
                j = int(np.argmax(d))
                if d[j] >= np.pi - 1e-9:
                    break
                c = self.interpolate_batch(c[None], pts[j][None], 1.0 / (k + 1))[0]
            r = float(sphere_dist(c[None], pts).max())
            if r < best_r:
                best_c, best_r = c, r
        return best_c, best_r

    def _frechet_mean(self, pts, w, tol, max_iter, ball):
        hint = None if ball is None else ball.center
        c, rad = self.enclosing_radius(pts, hint)
        if ball is not None:
            rb = float(sphere_dist(ball.center[None], pts).max())
            if rb < rad:
                c, rad = ball.center, rb
        if rad >= PI_4:
            raise FrechetMeanError(
                f"sphere: points are not contained in a ball of radius < pi/4 (radius {rad:.4f})"
            )
        x = c.copy()
        wn = w / w.sum()
        for _ in range(max_iter):
            v = (wn[:, None] * sphere_log(np.broadcast_to(x, pts.shape), pts)).sum(axis=0)
            x = sphere_exp(x, v)
            if np.linalg.norm(v) < tol:
                break
        else:
            raise FrechetMeanError("sphere: Frechet mean iteration did not converge")
        return x


# ---------------------------------------------------------------------------
# Metric trees


@dataclass(frozen=True)
class Tree(TargetSpace):
    """Finite metric tree given by ``edges = ((u, v, length), ...)``.

    A point is ``(edge id, offset)`` measured from node ``u`` of that edge.
    """

    edges: tuple = ((0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0))
    kind: str = field(default="tree", init=False)
    curvature: str = field(default="NPC", init=False)
    coord_dim: int = field(default=2, init=False)

    def __post_init__(self):
        edges = tuple((int(u), int(v), float(L)) for u, v, L in self.edges)
        object.__setattr__(self, "edges", edges)
        nodes = sorted({u for u, _, _ in edges} | {v for _, v, _ in edges})
        if nodes != list(range(len(nodes))):
            raise ValueError("tree: nodes must be labelled 0..n-1")
        if len(edges) != len(nodes) - 1 or any(L <= 0 for _, _, L in edges):
            raise ValueError("tree: need n-1 edges of positive length")
        adj = {i: [] for i in nodes}
        for e, (u, v, L) in enumerate(edges):
            adj[u].append((v, L, e))
            adj[v].append((u, L, e))
        n = len(nodes)
        D = np.full((n, n), np.inf)
        for s in nodes:
            D[s, s] = 0.0
            dq = deque([s])
            while dq:
                a = dq.popleft()
                for b, L, _ in adj[a]:
                    if not np.isfinite(D[s, b]):
                        D[s, b] = D[s, a] + L
                        dq.append(b)
        if not np.all(np.isfinite(D)):
            raise ValueError("tree: edge set is not connected")
        object.__setattr__(self, "_D", D)
        object.__setattr__(self, "_adj", adj)
        object.__setattr__(self, "_eu", np.array([u for u, _, _ in edges]))
        object.__setattr__(self, "_ev", np.array([v for _, v, _ in edges]))
        object.__setattr__(self, "_el", np.array([L for _, _, L in edges]))

    @classmethod
    def tripod(cls, leg: float = 1.0) -> "Tree":
        return cls(edges=((0, 1, leg), (0, 2, leg), (0, 3, leg)))

    def check(self, pts):
        e = pts[:, 0]
        if np.any(e != np.round(e)) or np.any(e < 0) or np.any(e >= len(self.edges)):
            raise ValueError("tree: invalid edge id")
        off = pts[:, 1]
        L = self._el[e.astype(int)]
        if np.any(off < -1e-12) or np.any(off > L + 1e-12):
            raise ValueError("tree: offset outside its edge")

    def node_point(self, node: int) -> np.ndarray:
        for e, (u, v, L) in enumerate(self.edges):
            if u == node:
                return np.array([e, 0.0])
            if v == node:
                return np.array([e, L])
        raise ValueError(node)

    def distances(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        a, b = np.broadcast_arrays(a, b)
        ea = a[..., 0].astype(int)
        eb = b[..., 0].astype(int)
        oa, ob = a[..., 1], b[..., 1]
        La, Lb = self._el[ea], self._el[eb]
        ua, va, ub, vb = self._eu[ea], self._ev[ea], self._eu[eb], self._ev[eb]
        D = self._D
        cand = np.stack([
            oa + D[ua, ub] + ob,
            oa + D[ua, vb] + (Lb - ob),
            (La - oa) + D[va, ub] + ob,
            (La - oa) + D[va, vb] + (Lb - ob),
        ])
        d = cand.min(axis=0)
        return np.where(ea == eb, np.abs(oa - ob), d)

    def _path_nodes(self, s: int, t: int) -> list[int]:
        if s == t:
            return [s]
        prev = {s: None}
        dq = deque([s])
        while dq:
            a = dq.popleft()
            for b, _, _ in self._adj[a]:
                if b not in prev:
                    prev[b] = a
                    dq.append(b)
        path = [t]
        while path[-1] != s:
            path.append(prev[path[-1]])
        return path[::-1]

    def _edge_between(self, a: int, b: int) -> int:
        for nb, _, e in self._adj[a]:
            if nb == b:
                return e
        raise ValueError((a, b))

    def _interp_one(self, p, q, t):
        e1, o1 = int(p[0]), float(p[1])
        e2, o2 = int(q[0]), float(q[1])
        if e1 == e2:
            return np.array([e1, (1 - t) * o1 + t * o2])
        d = float(self.distances(p, q))
        target = t * d
        # leave edge e1 through the endpoint on the way to q
        u1, v1, L1 = self.edges[e1]
        u2, v2, L2 = self.edges[e2]
        best = None
        for a, da in ((u1, o1), (v1, L1 - o1)):
            for b, db in ((u2, o2), (v2, L2 - o2)):
                tot = da + self._D[a, b] + db
                if best is None or tot < best[0] - 1e-15:
                    best = (tot, a, da, b, db)
        _, a, da, b, db = best
        if target <= da:
            return np.array([e1, o1 - target if a == u1 else o1 + target])
        walked = da
        nodes = self._path_nodes(a, b)
        for x, y in zip(nodes[:-1], nodes[1:]):
            e = self._edge_between(x, y)
            L = self.edges[e][2]
            if target <= walked + L:
                s = target - walked
                return np.array([e, s if self.edges[e][0] == x else L - s])
            walked += L
        s = target - walked
        return np.array([e2, s if b == u2 else L2 - s])

    def interpolate_batch(self, a, b, t):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        t = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1), (len(a),))
        return np.array([self._interp_one(p, q, s) for p, q, s in zip(a, b, t)])

    def _frechet_mean(self, pts, w, tol, max_iter, ball):
        # F restricted to an edge is a 1-D quadratic; minimize edge by edge.
        W = w.sum()
        best = None
        for e, (u, v, L) in enumerate(self.edges):
            du = self.distances(np.broadcast_to([e, 0.0], pts.shape), pts)
            dv = self.distances(np.broadcast_to([e, L], pts.shape), pts)
            on = pts[:, 0].astype(int) == e
            # coordinate of each point's "image" on the line through the edge
            c = np.where(on, pts[:, 1], np.where(du + L <= dv + 1e-12, -du, L + dv))
            s = float(np.clip((w * c).sum() / W, 0.0, L))
            x = np.array([e, s])
            f = self.objective(x, pts, w)
            if best is None or f < best[0] - 1e-15:
                best = (f, x)
        return best[1]


def make_space(spec: dict) -> TargetSpace:
    """Build a target from a config dict such as ``{"kind": "sphere", "m": 2}``."""
    kind = spec["kind"]
    if kind == "sphere":
        return Sphere(m=int(spec.get("m", 2)))
    if kind == "arc":
        return Arc(length=float(spec["length"]))
    if kind == "euclidean":
        return Euclidean(m=int(spec.get("m", 1)))
    if kind == "tree":
        if "edges" in spec:
            return Tree(edges=tuple(tuple(e) for e in spec["edges"]))
        return Tree.tripod(float(spec.get("leg", 1.0)))
    if kind == "cone":
        from .cone import ConeSpace

        return ConeSpace(make_space(spec["base"]))
    raise ValueError(f"unknown target kind {kind!r}")
