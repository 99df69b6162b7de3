"""Local models, Lipschitz metric fields and simplicial meshes of ``B(r)``.

Two-dimensional models are unions of planar sectors (wedges) glued along
their boundary rays by rotations.  Each wedge keeps its own copy of R^2; a
sector is stored by the polar angles ``[start, stop]`` of its two rays, so for
a cone of total angle ``theta`` the polar angle inside the wedges is the
unrolled cone angle.  Three-dimensional models are products of a 2-D model
with the z-axis.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay, cKDTree
from scipy.stats import qmc

TWO_PI = 2.0 * np.pi


class MeshResolutionError(ValueError):
    """A radius is too small for the mesh to resolve."""


class UnsupportedGluingError(ValueError):
    """A gluing is not one of the rotations produced by the model builders."""


@dataclass(frozen=True)
class Wedge:
    start: float
    stop: float

    @property
    def angle(self) -> float:
        return self.stop - self.start


@dataclass(frozen=True)
class Gluing:
    """Identify side ``side_a`` of wedge ``a`` with side ``side_b`` of ``b``.

    ``rotation`` is the planar rotation angle taking coordinates of the
    boundary cell in wedge ``a`` to those in wedge ``b``.
    """

    a: int
    side_a: int
    b: int
    side_b: int
    rotation: float = 0.0


@dataclass(frozen=True)
class LocalModel:
    kind: str  # "cone", "book" or "wedge"; products carry base_kind
    n: int
    codim: int
    wedges: tuple
    gluings: tuple
    params: tuple = ()

    def __post_init__(self):
        for w in self.wedges:
            if not (0.0 < w.angle <= np.pi + 1e-12):
                raise ValueError(f"wedge {w} is not a convex sector (angle must lie in (0, pi])")
        for g in self.gluings:
            wa, wb = self.wedges[g.a], self.wedges[g.b]
            ang_a = wa.start if g.side_a == 0 else wa.stop
            ang_b = wb.start if g.side_b == 0 else wb.stop
            if abs(_wrap(ang_a + g.rotation - ang_b)) > 1e-9:
                raise UnsupportedGluingError(f"gluing {g} does not map ray onto ray")
        object.__setattr__(self, "_classes", self._side_classes())

    @property
    def param(self) -> dict:
        return dict(self.params)

    @property
    def total_angle(self) -> float:
        return float(sum(w.angle for w in self.wedges))

    def _side_classes(self) -> dict:
        parent = {(w, s): (w, s) for w in range(len(self.wedges)) for s in (0, 1)}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for g in self.gluings:
            ra, rb = find((g.a, g.side_a)), find((g.b, g.side_b))
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
        return {k: find(k) for k in parent}

    def side_class(self, wedge: int, side: int):
        return self._classes[(wedge, side)]

    def side_angle(self, wedge: int, side: int) -> float:
        w = self.wedges[wedge]
        return w.start if side == 0 else w.stop

    def is_glued(self, wedge: int, side: int) -> bool:
        c = self._classes[(wedge, side)]
        return sum(1 for v in self._classes.values() if v == c) > 1

    @property
    def admissible(self) -> bool:
        """Wedges minus the (n-2)-skeleton form one connected piece."""
        k = len(self.wedges)
        parent = list(range(k))

        def find(x):
            while parent[x] != x:
                x = parent[x]
            return x

        for g in self.gluings:
            parent[find(g.a)] = find(g.b)
        return len({find(i) for i in range(k)}) == 1

    # -- geometry --------------------------------------------------------
    def polar_angle(self, wedge, x) -> np.ndarray:
        """Polar angle of planar coordinates, placed inside the wedge's sector."""
        wedge = np.asarray(wedge, dtype=int)
        x = np.asarray(x, dtype=float)
        starts = np.array([w.start for w in self.wedges])[wedge]
        stops = np.array([w.stop for w in self.wedges])[wedge]
        raw = np.arctan2(x[..., 1], x[..., 0])
        phi = starts + np.mod(raw - starts + 1e-12, TWO_PI) - 1e-12
        # points just below the start ray due to roundoff
        over = phi > stops + 1e-9
        phi = np.where(over, starts, phi)
        return np.clip(phi, starts, stops)

    def distance(self, w1, x1, w2, x2) -> np.ndarray:
        """Intrinsic Euclidean distance of the glued model (vectorized)."""
        w1 = np.asarray(w1, dtype=int)
        w2 = np.asarray(w2, dtype=int)
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        d2 = self._planar_distance(w1, x1[..., :2], w2, x2[..., :2])
        if self.n == 3:
            return np.hypot(d2, x1[..., 2] - x2[..., 2])
        return d2

    def _planar_distance(self, w1, x1, w2, x2):
        r1 = np.hypot(x1[..., 0], x1[..., 1])
        r2 = np.hypot(x2[..., 0], x2[..., 1])
        base = self.param.get("base_kind", self.kind)
        if base == "cone":
            theta = self.total_angle
            p1 = self.polar_angle(w1, x1)
            p2 = self.polar_angle(w2, x2)
            dphi = np.mod(np.abs(p1 - p2), theta)
            dphi = np.minimum(dphi, theta - dphi)
            cos_term = np.sqrt(np.maximum(r1 * r1 + r2 * r2 - 2 * r1 * r2 * np.cos(dphi), 0.0))
            return np.where(dphi >= np.pi, r1 + r2, cos_term)
        if base == "book":
            same = w1 == w2
            flat = np.linalg.norm(x1 - x2, axis=-1)
            unfolded = np.hypot(x1[..., 0] - x2[..., 0], x1[..., 1] + x2[..., 1])
            return np.where(same, flat, unfolded)
        if base == "wedge":
            return np.linalg.norm(x1 - x2, axis=-1)
        raise ValueError(f"no distance for model kind {self.kind!r}")


def _cross2(u, v):
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def _wrap(a):
    return (np.asarray(a) + np.pi) % TWO_PI - np.pi


def build_book(pages: int, n: int = 2) -> LocalModel:
    """``pages`` half-planes glued along a common spine line."""
    if pages < 1:
        raise ValueError("a book needs at least one page")
    wedges = tuple(Wedge(0.0, np.pi) for _ in range(pages))
    gluings = []
    for j in range(1, pages):
        gluings.append(Gluing(0, 0, j, 0, 0.0))
        gluings.append(Gluing(0, 1, j, 1, 0.0))
    model = LocalModel("book", 2, 1, wedges, tuple(gluings), (("pages", pages),))
    return build_product(model) if n == 3 else model


def build_cone_domain(total_angle: float) -> LocalModel:
    """2-D cone of total angle ``theta`` from ceil(theta / (pi/2)) sectors."""
    if total_angle <= 0:
        raise ValueError("cone angle must be positive")
    m = max(1, math.ceil(total_angle / (np.pi / 2) - 1e-12))
    beta = total_angle / m
    wedges = tuple(Wedge(j * beta, (j + 1) * beta) for j in range(m))
    # last wedge keeps start + beta exactly equal to the next start
    wedges = tuple(Wedge(wedges[j].start, wedges[j + 1].start if j + 1 < m else total_angle) for j in range(m))
    gluings = [Gluing(j, 1, j + 1, 0, 0.0) for j in range(m - 1)]
    gluings.append(Gluing(m - 1, 1, 0, 0, -total_angle))
    return LocalModel("cone", 2, 2, wedges, tuple(gluings), (("total_angle", float(total_angle)),))


def build_wedge(angle: float) -> LocalModel:
    """A single convex sector with free boundary rays."""
    return LocalModel("wedge", 2, 2 if angle < np.pi else 1, (Wedge(0.0, float(angle)),), (),
                      (("angle", float(angle)),))


def build_product(model: LocalModel) -> LocalModel:
    """``model x R`` as a 3-dimensional local model."""
    if model.n != 2:
        raise ValueError("products are built from 2-dimensional models")
    params = tuple(sorted(dict(model.params, base_kind=model.kind).items()))
    return LocalModel("product", 3, model.codim, model.wedges, model.gluings, params)


def model_from_spec(spec: dict) -> LocalModel:
    kind = spec["kind"]
    if kind == "cone":
        m = build_cone_domain(float(spec["total_angle"]))
    elif kind == "flat":
        m = build_cone_domain(TWO_PI)
    elif kind == "book":
        m = build_book(int(spec["pages"]))
    elif kind == "wedge":
        m = build_wedge(float(spec["angle"]))
    else:
        raise ValueError(f"unknown domain kind {kind!r}")
    if int(spec.get("n", 2)) == 3:
        m = build_product(m)
    return m


def _model_spec(model: LocalModel) -> dict:
    p = model.param
    base = p.get("base_kind", model.kind)
    spec = {"kind": base, "n": model.n}
    if base == "cone":
        spec["total_angle"] = p["total_angle"]
    elif base == "book":
        spec["pages"] = p["pages"]
    elif base == "wedge":
        spec["angle"] = p["angle"]
    return spec


# ---------------------------------------------------------------------------
# Metric fields


@dataclass(frozen=True)
class MetricSample:
    g: np.ndarray
    volume_density: np.ndarray
    boundary_density: np.ndarray | None


@dataclass(frozen=True)
class MetricField:
    """Wedgewise metric ``g_ij(x)`` given in closed form.

    ``lipschitz`` and ``ellipticity`` are the declared constants ``c`` and
    ``lambda``; ``audit`` checks them on samples.
    """

    name: str
    n: int = 2
    params: tuple = ()
    lipschitz: float = 0.0
    ellipticity: float = 1.0

    def matrix(self, wedge, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        N = x.shape[0]
        p = dict(self.params)
        eye = np.broadcast_to(np.eye(self.n), (N, self.n, self.n))
        if self.name == "euclidean":
            return eye.copy()
        if self.name == "conformal":
            a = np.asarray(p["a"], dtype=float)
            if a.ndim > 0:
                a = a[np.asarray(wedge, dtype=int)]
            fac = 1.0 + a * np.linalg.norm(x, axis=-1)
            return eye * np.broadcast_to(fac, (N,))[:, None, None]
        if self.name == "anisotropic":
            A = np.asarray(p["matrix"], dtype=float)
            return np.broadcast_to(A, (N, self.n, self.n)).copy()
        raise ValueError(f"unknown metric field {self.name!r}")

    @property
    def normalized(self) -> bool:
        g0 = self.matrix(np.zeros(1, dtype=int), np.zeros((1, self.n)))[0]
        return bool(np.allclose(g0, np.eye(self.n), atol=0.0, rtol=0.0))


def make_metric(spec: dict | None, n: int = 2, r: float = 1.0) -> MetricField:
    spec = spec or {"name": "euclidean"}
    name = spec["name"]
    if name == "euclidean":
        return MetricField("euclidean", n)
    if name == "conformal":
        a = spec["a"]
        amax = float(np.max(np.abs(a)))
        if np.min(a) < 0:
            raise ValueError("conformal factor slope must be nonnegative")
        p = (("a", tuple(a) if isinstance(a, (list, tuple)) else float(a)),)
        return MetricField("conformal", n, p, lipschitz=amax, ellipticity=1.0 / (1.0 + amax * r))
    if name == "anisotropic":
        A = np.asarray(spec["matrix"], dtype=float)
        if A.shape != (n, n) or not np.allclose(A, A.T):
            raise ValueError("anisotropic metric needs a symmetric n x n matrix")
        ev = np.linalg.eigvalsh(A)
        if ev.min() <= 0:
            raise ValueError("anisotropic metric must be positive definite")
        lam = float(min(ev.min(), 1.0 / ev.max(), 1.0))
        p = (("matrix", tuple(map(tuple, A.tolist()))),)
        return MetricField("anisotropic", n, p, lipschitz=0.0, ellipticity=lam)
    raise ValueError(f"unknown metric field {name!r}")


def metric_eval(metric: MetricField, wedge, x, normal=None) -> MetricSample:
    """``g`` at points ``x`` of ``wedge`` with volume and boundary densities.

    The boundary density is relative to Euclidean surface measure on the
    sphere through ``x`` centred at the origin (or with the given unit
    ``normal``).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    wedge = np.broadcast_to(np.asarray(wedge, dtype=int), (x.shape[0],))
    g = metric.matrix(wedge, x)
    if not np.allclose(g, np.swapaxes(g, -1, -2), atol=1e-14):
        raise ValueError(f"metric {metric.name}: g is not symmetric")
    ev = np.linalg.eigvalsh(g)
    lam = metric.ellipticity
    if np.any(ev < lam * (1 - 1e-12)) or np.any(ev > (1 + 1e-12) / lam):
        raise ValueError(f"metric {metric.name}: ellipticity constant {lam} violated")
    vol = np.sqrt(np.linalg.det(g))
    if normal is None:
        rn = np.linalg.norm(x, axis=-1, keepdims=True)
        if np.any(rn == 0):
            return MetricSample(g, vol, None)
        normal = x / rn
    normal = np.broadcast_to(np.asarray(normal, dtype=float), x.shape)
    T = _tangent_frame(normal)
    gt = np.einsum("nai,nij,nbj->nab", T, g, T)
    bd = np.sqrt(np.linalg.det(gt))
    return MetricSample(g, vol, bd)


def _tangent_frame(normal):
    """Orthonormal frames (N, n-1, n) of the planes orthogonal to ``normal``."""
    n = normal.shape[-1]
    if n == 2:
        return np.stack([-normal[:, 1], normal[:, 0]], axis=-1)[:, None, :]
    out = np.empty((normal.shape[0], n - 1, n))
    for k, nv in enumerate(normal):
        q, _ = np.linalg.qr(np.column_stack([nv, np.eye(n)]))
        out[k] = q[:, 1:n].T
    return out


def audit_metric(metric: MetricField, model: LocalModel, r: float, samples: int = 2000,
                 seed: int = 0) -> dict:
    """Sampled symmetry, ellipticity and Lipschitz audit on ``B(r)``."""
    rng = np.random.default_rng(seed)
    k = len(model.wedges)
    worst_lip = 0.0
    for w in range(k):
        x = _sample_wedge(model, w, r, samples, rng)
        y = _sample_wedge(model, w, r, samples, rng)
        gx = metric_eval(metric, w, x).g
        gy = metric_eval(metric, w, y).g
        dist = np.linalg.norm(x - y, axis=-1)
        ok = dist > 1e-12
        ratio = np.abs(gx - gy).max(axis=(1, 2))[ok] / dist[ok]
        worst_lip = max(worst_lip, float(ratio.max(initial=0.0)))
    return {"lipschitz_observed": worst_lip, "lipschitz_declared": metric.lipschitz,
            "passed": worst_lip <= metric.lipschitz * (1 + 1e-9) + 1e-12}


def _sample_wedge(model, w, r, count, rng):
    wd = model.wedges[w]
    rho = r * np.sqrt(rng.uniform(0, 1, count))
    phi = rng.uniform(wd.start, wd.stop, count)
    pts = np.column_stack([rho * np.cos(phi), rho * np.sin(phi)])
    if model.n == 3:
        pts = np.column_stack([pts, rng.uniform(-r, r, count)])
    return pts


# ---------------------------------------------------------------------------
# Meshes


@dataclass(eq=False)
class Mesh:
    model: LocalModel
    points: np.ndarray  # (N, n) coordinates in the home wedge
    home: np.ndarray  # (N,) home wedge id
    simplices: np.ndarray  # (S, n + 1)
    simplex_wedge: np.ndarray  # (S,)
    boundary: np.ndarray  # (N,) bool, pinned vertices
    r: float
    h: float
    grading: float
    simplex_coords: np.ndarray = field(init=False)

    def __post_init__(self):
        self.simplex_coords = _simplex_coords(self.model, self.points, self.home,
                                              self.simplices, self.simplex_wedge)

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def num_vertices(self) -> int:
        return len(self.points)

    @property
    def radius(self) -> np.ndarray:
        return np.linalg.norm(self.points, axis=-1)

    def volumes(self) -> np.ndarray:
        X = self.simplex_coords
        D = X[:, 1:, :] - X[:, :1, :]
        return np.abs(np.linalg.det(D)) / math.factorial(self.n)

    def edges(self) -> np.ndarray:
        s = self.simplices
        pairs = [s[:, [i, j]] for i in range(s.shape[1]) for j in range(i + 1, s.shape[1])]
        e = np.sort(np.concatenate(pairs), axis=1)
        return np.unique(e, axis=0)

    def edge_lengths(self) -> np.ndarray:
        X = self.simplex_coords
        k = X.shape[1]
        return np.stack([np.linalg.norm(X[:, i] - X[:, j], axis=-1)
                         for i in range(k) for j in range(i + 1, k)], axis=1)

    def polar_angle(self) -> np.ndarray:
        """Planar polar angle of every vertex in its home wedge (0 on the axis)."""
        rho = np.hypot(self.points[:, 0], self.points[:, 1])
        phi = self.model.polar_angle(self.home, self.points[:, :2])
        return np.where(rho > 0, phi, 0.0)

    def audit(self) -> dict:
        used = np.zeros(self.num_vertices, dtype=bool)
        used[self.simplices.ravel()] = True
        X = self.simplex_coords
        D = X[:, 1:, :] - X[:, :1, :]
        vol = np.linalg.det(D) / math.factorial(self.n)
        return {
            "orphans": int((~used).sum()),
            "min_volume": float(np.abs(vol).min()),
            "inverted": int((vol <= 1e-14).sum()),
            "boundary_vertices": int(self.boundary.sum()),
        }


def _ring_radii(r: float, h: float, grading: float) -> np.ndarray:
    M = max(2, math.ceil(grading * r / h - 1e-9))
    i = np.arange(M + 1)
    return r * (i / M) ** grading


def triangulate(model: LocalModel, r: float, h: float, grading: float = 1.0) -> Mesh:
    """Conforming simplicial mesh of ``B(r)`` (a cylinder around it for n = 3).

    Rings at radii ``r (i/M)^grading`` carry vertices spaced like the ring
    gap, so cells shrink towards the origin when ``grading > 1``.  Each wedge
    is Delaunay-triangulated; glued rays share their vertices.
    """
    if not (h < r / 4):
        raise ValueError(f"mesh size h={h} must be below r/4={r / 4}")
    if grading < 1:
        raise ValueError("grading exponent must be >= 1")
    base = model if model.n == 2 else LocalModel(model.param["base_kind"], 2, model.codim, model.wedges,
                                                 model.gluings, tuple((k, v) for k, v in model.params
                                                                      if k != "base_kind"))
    mesh2 = _triangulate_2d(base, r, h, grading)
    if model.n == 2:
        return mesh2
    return _extrude(model, mesh2, r, h)


def _triangulate_2d(model: LocalModel, r, h, grading) -> Mesh:
    radii = _ring_radii(r, h, grading)
    keys: dict = {}
    pts, home = [], []
    simplices, swedge = [], []

    def vid(key, w, xy):
        if key not in keys:
            keys[key] = len(pts)
            pts.append(xy)
            home.append(w)
        return keys[key]

    for w, wd in enumerate(model.wedges):
        beta = wd.angle
        local_ids = [vid(("o",), w, (0.0, 0.0))]
        local_xy = [(0.0, 0.0)]
        for i in range(1, len(radii)):
            rho = radii[i]
            gap = rho - radii[i - 1]
            ns = max(1, math.ceil(beta * rho / gap - 1e-9))
            for k in range(ns + 1):
                if k == 0:
                    ang = wd.start
                    key = ("ray", model.side_class(w, 0), i)
                elif k == ns:
                    ang = wd.stop
                    key = ("ray", model.side_class(w, 1), i)
                else:
                    ang = wd.start + beta * k / ns
                    key = ("in", w, i, k)
                xy = (rho * math.cos(ang), rho * math.sin(ang))
                local_ids.append(vid(key, w, xy))
                local_xy.append(xy)
        tri = Delaunay(np.array(local_xy))
        ids = np.array(local_ids)
        simp = ids[tri.simplices]
        # counter-clockwise orientation
        P = np.array(local_xy)[tri.simplices]
        orient = _cross2(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0])
        simp[orient < 0] = simp[orient < 0][:, [0, 2, 1]]
        simplices.append(simp)
        swedge.append(np.full(len(simp), w))
    points = np.array(pts, dtype=float)
    rad = np.linalg.norm(points, axis=1)
    boundary = np.isclose(rad, r, rtol=0, atol=1e-12 * r)
    mesh = Mesh(model, points, np.array(home), np.concatenate(simplices), np.concatenate(swedge),
                boundary, float(r), float(h), float(grading))
    aud = mesh.audit()
    if aud["inverted"] or aud["orphans"]:
        raise RuntimeError(f"mesh generation produced a defective mesh: {aud}")
    return mesh


def _extrude(model: LocalModel, mesh2: Mesh, r, h) -> Mesh:
    levels = np.linspace(-r, r, max(2, math.ceil(2 * r / h)) + 1)
    Nb = mesh2.num_vertices
    L = len(levels)
    pts = np.concatenate([np.column_stack([mesh2.points, np.full(Nb, z)]) for z in levels])
    home = np.tile(mesh2.home, L)
    bnd = np.tile(mesh2.boundary, L)
    bnd[:Nb] = True
    bnd[-Nb:] = True
    tets, tw = [], []
    tri = np.sort(mesh2.simplices, axis=1)
    for l in range(L - 1):
        lo, up = l * Nb, (l + 1) * Nb
        a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
        tets.append(np.column_stack([a + lo, b + lo, c + lo, a + up]))
        tets.append(np.column_stack([b + lo, c + lo, a + up, b + up]))
        tets.append(np.column_stack([c + lo, a + up, b + up, c + up]))
        tw.extend([mesh2.simplex_wedge] * 3)
    simp = np.concatenate(tets)
    sw = np.concatenate(tw)
    mesh = Mesh(model, pts, home, simp, sw, bnd, float(r), float(h), float(mesh2.grading))
    # positive orientation
    X = mesh.simplex_coords
    det = np.linalg.det(X[:, 1:] - X[:, :1])
    flip = det < 0
    simp[flip] = simp[flip][:, [0, 2, 1, 3]]
    return Mesh(model, pts, home, simp, sw, bnd, float(r), float(h), float(mesh2.grading))


def _simplex_coords(model, points, home, simplices, swedge) -> np.ndarray:
    """Coordinates of every simplex vertex in the simplex's own wedge."""
    X = points[simplices].copy()
    foreign = home[simplices] != swedge[:, None]
    if not np.any(foreign):
        return X
    si, vi = np.nonzero(foreign)
    v = simplices[si, vi]
    w_to = swedge[si]
    w_from = home[v]
    xy = points[v, :2]
    rho = np.hypot(xy[:, 0], xy[:, 1])
    ang = np.arctan2(xy[:, 1], xy[:, 0])
    new = np.zeros((len(v), 2))
    for k in range(len(v)):
        if rho[k] == 0.0:
            continue
        side_from = None
        for s in (0, 1):
            if abs(_wrap(ang[k] - model.side_angle(w_from[k], s))) < 1e-9:
                side_from = s
        if side_from is None:
            raise ValueError(f"vertex {v[k]} used by wedge {w_to[k]} is not on a boundary ray")
        cls = model.side_class(w_from[k], side_from)
        side_to = [s for s in (0, 1) if model.side_class(w_to[k], s) == cls]
        if not side_to:
            raise UnsupportedGluingError(f"vertex {v[k]} is not glued into wedge {w_to[k]}")
        a = model.side_angle(w_to[k], side_to[0])
        new[k] = (rho[k] * math.cos(a), rho[k] * math.sin(a))
    X[si, vi, :2] = new
    return X


# ---------------------------------------------------------------------------
# Mesh file format


def write_mesh(mesh: Mesh, path) -> None:
    """Plain-text mesh file; floats written with ``repr`` for exact round trips."""
    lines = ["polyharm-mesh 1",
             f"header {mesh.n} {mesh.model.codim} {len(mesh.model.wedges)}",
             "model " + json.dumps(_model_spec(mesh.model), sort_keys=True),
             f"ball {mesh.r!r} {mesh.h!r} {mesh.grading!r}"]
    for k, wd in enumerate(mesh.model.wedges):
        lines.append(f"W {k} {wd.start!r} {wd.stop!r}")
    for g in mesh.model.gluings:
        lines.append(f"G {g.a} {g.side_a} {g.b} {g.side_b} {g.rotation!r}")
    for i, (x, w, b) in enumerate(zip(mesh.points, mesh.home, mesh.boundary)):
        lines.append(f"V {i} {w} " + " ".join(repr(float(c)) for c in x) + f" {int(b)}")
    for s, w in zip(mesh.simplices, mesh.simplex_wedge):
        lines.append("S " + " ".join(str(int(v)) for v in s) + f" {w}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    text = Path(path).read_text().splitlines()
    if not text or text[0] != "polyharm-mesh 1":
        raise ValueError(f"{path}: not a polyharm mesh file")
    spec, wedges, gluings, verts, simps = None, [], [], [], []
    r = h = grading = None
    for line in text[1:]:
        tag, _, rest = line.partition(" ")
        if tag == "header":
            n, nu, nw = map(int, rest.split())
        elif tag == "model":
            spec = json.loads(rest)
        elif tag == "ball":
            r, h, grading = map(float, rest.split())
        elif tag == "W":
            _, a, b = rest.split()
            wedges.append(Wedge(float(a), float(b)))
        elif tag == "G":
            a, sa, b, sb, rot = rest.split()
            gluings.append(Gluing(int(a), int(sa), int(b), int(sb), float(rot)))
        elif tag == "V":
            verts.append(rest.split())
        elif tag == "S":
            simps.append(list(map(int, rest.split())))
    model = model_from_spec(spec)
    if tuple(wedges) != model.wedges or tuple(gluings) != model.gluings:
        raise UnsupportedGluingError(
            f"{path}: wedges/gluings differ from the {spec['kind']} model; exotic gluings are not supported")
    if n != model.n or nu != model.codim or nw != len(model.wedges):
        raise ValueError(f"{path}: header does not match model")
    pts = np.array([[float(c) for c in v[2:-1]] for v in verts])
    home = np.array([int(v[1]) for v in verts])
    bnd = np.array([v[-1] == "1" for v in verts])
    S = np.array(simps)
    return Mesh(model, pts, home, S[:, :-1], S[:, -1], bnd, r, h, grading)


# ---------------------------------------------------------------------------
# Point location and sphere sampling


class PointLocator:
    """Find the simplex of a wedge containing given points."""

    def __init__(self, mesh: Mesh, k: int = 16):
        self.mesh = mesh
        self.k = k
        X = mesh.simplex_coords
        self._cent = X.mean(axis=1)
        self._by_wedge = {}
        for w in range(len(mesh.model.wedges)):
            ids = np.nonzero(mesh.simplex_wedge == w)[0]
            self._by_wedge[w] = (ids, cKDTree(self._cent[ids]))
        D = X[:, 1:, :] - X[:, :1, :]
        self._Dinv = np.linalg.inv(D)

    def _bary(self, sids, x):
        X0 = self.mesh.simplex_coords[sids, 0, :]
        lam = np.einsum("nij,nj->ni", np.swapaxes(self._Dinv[sids], 1, 2), x - X0)
        return np.column_stack([1.0 - lam.sum(axis=1), lam])

    def locate(self, wedge, x, tol: float = 1e-10):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        wedge = np.broadcast_to(np.asarray(wedge, dtype=int), (len(x),))
        sid = np.full(len(x), -1)
        bary = np.zeros((len(x), self.mesh.n + 1))
        for w in np.unique(wedge):
            rows = np.nonzero(wedge == w)[0]
            ids, tree = self._by_wedge[int(w)]
            k = min(self.k, len(ids))
            _, nb = tree.query(x[rows], k=k)
            nb = np.atleast_2d(nb)
            found = np.zeros(len(rows), dtype=bool)
            for j in range(k):
                todo = ~found
                if not np.any(todo):
                    break
                cand = ids[nb[todo, j]]
                b = self._bary(cand, x[rows[todo]])
                ok = b.min(axis=1) >= -tol
                idx = rows[todo][ok]
                sid[idx] = cand[ok]
                bary[idx] = b[ok]
                found[np.nonzero(todo)[0][ok]] = True
            for q in np.nonzero(~found)[0]:
                b = self._bary(ids, np.broadcast_to(x[rows[q]], (len(ids), x.shape[1])))
                j = int(np.argmax(b.min(axis=1)))
                if b[j].min() >= -tol:
                    sid[rows[q]] = ids[j]
                    bary[rows[q]] = b[j]
        if np.any(sid < 0):
            raise MeshResolutionError(f"{int((sid < 0).sum())} points lie outside the mesh")
        return sid, np.clip(bary, 0.0, 1.0) / np.clip(bary, 0.0, 1.0).sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class SphereSample:
    """Quadrature on ``dB(sigma)``: points, g-induced weights and locations."""

    sigma: float
    wedge: np.ndarray
    coords: np.ndarray
    weights: np.ndarray
    simplex: np.ndarray
    bary: np.ndarray


def sphere_sample(mesh: Mesh, sigma: float, metric: MetricField | None = None,
                  resolution: int = 2048, locator: PointLocator | None = None,
                  center=None) -> SphereSample:
    """Midpoint-rule samples of the Euclidean ``sigma``-sphere in every wedge.

    ``resolution`` is the number of samples per angle ``2 pi`` (and per
    polar angle ``pi`` in 3-D).
    """
    metric = metric or MetricField("euclidean", mesh.n)
    if not (0 < sigma < mesh.r):
        raise ValueError(f"sphere radius {sigma} must lie in (0, r={mesh.r})")
    cw, cx = (None, None) if center is None else center
    wedges, coords, wts = [], [], []
    for w, wd in enumerate(mesh.model.wedges):
        if cw is not None and w != cw:
            continue
        if cw is None:
            span_a, span_b = wd.start, wd.stop
            c0 = np.zeros(mesh.n)
        else:
            span_a, span_b = 0.0, TWO_PI
            c0 = np.asarray(cx, dtype=float)
        K = max(8, int(round(resolution * (span_b - span_a) / TWO_PI)))
        phi = span_a + (np.arange(K) + 0.5) * (span_b - span_a) / K
        dphi = (span_b - span_a) / K
        if mesh.n == 2:
            nrm = np.column_stack([np.cos(phi), np.sin(phi)])
            x = c0 + sigma * nrm
            base_w = np.full(K, sigma * dphi)
        else:
            Kt = max(8, resolution // 2)
            th = (np.arange(Kt) + 0.5) * np.pi / Kt
            P, T = np.meshgrid(phi, th, indexing="ij")
            P, T = P.ravel(), T.ravel()
            nrm = np.column_stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)])
            x = c0 + sigma * nrm
            base_w = sigma**2 * np.sin(T) * dphi * (np.pi / Kt)
        ms = metric_eval(metric, w, x, normal=nrm)
        wedges.append(np.full(len(x), w))
        coords.append(x)
        wts.append(base_w * ms.boundary_density)
    wedge = np.concatenate(wedges)
    coords = np.concatenate(coords)
    loc = locator or PointLocator(mesh)
    sid, bary = loc.locate(wedge, coords)
    return SphereSample(float(sigma), wedge, coords, np.concatenate(wts), sid, bary)


def local_mesh_size(mesh: Mesh, sigma: float, center=None) -> float:
    """Median simplex diameter among simplices meeting the shell ``[sigma/2, sigma]``."""
    X = mesh.simplex_coords
    if center is None:
        rad = np.linalg.norm(X, axis=-1)
    else:
        cw, cx = center
        rad = np.linalg.norm(X - np.asarray(cx), axis=-1)
        rad[mesh.simplex_wedge != cw] = np.inf
    lo, hi = rad.min(axis=1), rad.max(axis=1)
    sel = (hi >= sigma / 2) & (lo <= sigma)
    if not np.any(sel):
        return np.inf
    return float(np.median(mesh.edge_lengths()[sel].max(axis=1)))


def ball_and_sphere(mesh: Mesh, sigma: float, metric: MetricField | None = None,
                    resolution: int = 2048, min_cells: float = 8.0, center=None):
    """Clip fractions of every simplex against ``B(sigma)`` and a sphere sample.

    Returns ``(fractions, SphereSample)`` where ``fractions[s]`` is the share of
    simplex ``s`` lying in the ball.
    """
    hloc = local_mesh_size(mesh, sigma, center)
    if sigma / hloc < min_cells:
        raise MeshResolutionError(
            f"sigma={sigma:g} spans only {sigma / hloc:.1f} cells (need {min_cells})")
    frac = ball_fractions(mesh, sigma, center)
    return frac, sphere_sample(mesh, sigma, metric, resolution, center=center)


def ball_fractions(mesh: Mesh, sigma: float, center=None) -> np.ndarray:
    if mesh.n == 2:
        return _disk_fractions(mesh, sigma, center)
    return _ball_fractions_qmc(mesh, sigma, center)


def triangle_disk_area(A, B, C, sigma):
    """Exact area of triangle ABC intersected with the disk of radius sigma at 0.

    Vectorized over leading axis.  Uses the signed decomposition into the
    triangles (0, P, Q) for each edge PQ.
    """
    A, B, C = (np.asarray(v, dtype=float) for v in (A, B, C))
    if A.ndim == 1:
        return float(triangle_disk_area(A[None], B[None], C[None], sigma)[0])

    def edge(P, Q):
        d = Q - P
        dd = np.einsum("ni,ni->n", d, d)
        pd = np.einsum("ni,ni->n", P, d)
        pp = np.einsum("ni,ni->n", P, P)
        disc = pd * pd - dd * (pp - sigma * sigma)
        sq = np.sqrt(np.maximum(disc, 0.0))
        safe = np.where(dd > 0, dd, 1.0)
        t1 = np.where(disc > 0, (-pd - sq) / safe, 1.0)
        t2 = np.where(disc > 0, (-pd + sq) / safe, 1.0)
        s1 = np.clip(t1, 0.0, 1.0)
        s2 = np.clip(np.maximum(t2, s1), 0.0, 1.0)
        X1 = P + s1[:, None] * d
        X2 = P + s2[:, None] * d

        def sector(U, V):
            cr = U[:, 0] * V[:, 1] - U[:, 1] * V[:, 0]
            dt = np.einsum("ni,ni->n", U, V)
            return 0.5 * sigma * sigma * np.arctan2(cr, dt)

        def tri(U, V):
            return 0.5 * (U[:, 0] * V[:, 1] - U[:, 1] * V[:, 0])

        return sector(P, X1) + tri(X1, X2) + sector(X2, Q)

    sign = np.where(_cross2(B - A, C - A) < 0, -1.0, 1.0)
    return sign * (edge(A, B) + edge(B, C) + edge(C, A))


def _disk_fractions(mesh, sigma, center):
    X = mesh.simplex_coords
    if center is not None:
        cw, cx = center
        X = X - np.asarray(cx)
    A, B, C = X[:, 0], X[:, 1], X[:, 2]
    area = 0.5 * np.abs(_cross2(B - A, C - A))
    clipped = triangle_disk_area(A, B, C, sigma)
    frac = np.clip(clipped / area, 0.0, 1.0)
    if center is not None:
        frac[mesh.simplex_wedge != center[0]] = 0.0
    return frac


_QMC_POINTS = None


def _ball_fractions_qmc(mesh, sigma, center, npts: int = 128):
    global _QMC_POINTS
    if _QMC_POINTS is None or len(_QMC_POINTS) != npts:
        u = qmc.Sobol(3, scramble=True, seed=12345).random(npts)
        s = np.sort(u, axis=1)
        _QMC_POINTS = np.column_stack([s[:, 0], s[:, 1] - s[:, 0], s[:, 2] - s[:, 1], 1 - s[:, 2]])
    X = mesh.simplex_coords
    if center is not None:
        X = X - np.asarray(center[1])
    pts = np.einsum("qk,skd->sqd", _QMC_POINTS, X)
    inside = np.linalg.norm(pts, axis=-1) <= sigma
    frac = inside.mean(axis=1)
    rad = np.linalg.norm(X, axis=-1)
    frac[rad.max(axis=1) <= sigma] = 1.0
    frac[rad.min(axis=1) >= sigma] = np.where(
        frac[rad.min(axis=1) >= sigma] > 0, frac[rad.min(axis=1) >= sigma], 0.0)
    if center is not None:
        frac[mesh.simplex_wedge != center[0]] = 0.0
    return frac
