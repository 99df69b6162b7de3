"""Metric cone ``CY`` over a target space.

``D^2([P,t],[Q,s]) = t^2 + s^2 - 2 t s cos(min(d(P,Q), pi))``.  Geodesics are
found by unrolling the two rays into a planar sector of opening
``min(d(P,Q), pi)``, joining the points by a straight segment and folding
back.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .targets import Arc, GeodesicError, Sphere, TargetSpace


@dataclass(frozen=True, eq=False)
class ConePoint:
    base: np.ndarray
    height: float

    def __post_init__(self):
        if self.height < 0:
            raise ValueError("cone point height must be nonnegative")
        object.__setattr__(self, "base", np.atleast_1d(np.asarray(self.base, dtype=float)))
        object.__setattr__(self, "height", float(self.height))

    @property
    def is_apex(self) -> bool:
        return self.height == 0.0

    def __eq__(self, other):
        if not isinstance(other, ConePoint):
            return NotImplemented
        if self.is_apex or other.is_apex:
            return self.is_apex and other.is_apex
        return self.height == other.height and np.array_equal(self.base, other.base)

    def __hash__(self):
        return hash(("apex",)) if self.is_apex else hash((self.height, self.base.tobytes()))


def cone_distance_raw(d_base, t, s):
    """Vectorized cone distance from base distances and heights."""
    # t^2 + s^2 - 2ts cos d, written without cancellation for nearby points
    h = np.sin(0.5 * np.minimum(d_base, np.pi))
    return np.sqrt((t - s) ** 2 + 4.0 * t * s * h * h)


def cone_distance(space: TargetSpace, a: ConePoint, b: ConePoint) -> float:
    if a.is_apex or b.is_apex:
        return abs(a.height - b.height)
    d = space.distance(a.base, b.base)
    return float(cone_distance_raw(d, a.height, b.height))


def cone_interpolate(space: TargetSpace, a: ConePoint, b: ConePoint, t: float) -> ConePoint:
    """Point at fraction ``t`` of the cone geodesic from ``a`` to ``b``."""
    if not (0.0 <= t <= 1.0):
        raise ValueError(f"interpolation fraction {t} outside [0, 1]")
    if t == 0.0:
        return a
    if t == 1.0:
        return b
    if a.is_apex and b.is_apex:
        return a
    if a.is_apex:
        return ConePoint(b.base, t * b.height)
    if b.is_apex:
        return ConePoint(a.base, (1.0 - t) * a.height)
    delta = min(space.distance(a.base, b.base), np.pi)
    pa = np.array([a.height, 0.0])
    pb = b.height * np.array([np.cos(delta), np.sin(delta)])
    z = (1.0 - t) * pa + t * pb
    rho = float(np.hypot(z[0], z[1]))
    if delta >= np.pi - 1e-15:
        # segment runs along the x-axis through the apex
        if z[0] > 0:
            return ConePoint(a.base, z[0])
        if z[0] < 0:
            return ConePoint(b.base, -z[0])
        return ConePoint(a.base, 0.0)
    if rho == 0.0:
        return ConePoint(a.base, 0.0)
    psi = float(np.arctan2(z[1], z[0]))
    frac = 0.0 if delta == 0.0 else min(max(psi / delta, 0.0), 1.0)
    return ConePoint(space.interpolate(a.base, b.base, frac), rho)


def lift(p) -> ConePoint:
    """``P -> [P, 1]``."""
    return ConePoint(p, 1.0)


def project_unit(a: ConePoint) -> ConePoint:
    """``[P, t] -> [P, 1]``; undefined at the apex."""
    if a.is_apex:
        raise ValueError("projection is undefined at the cone apex")
    return ConePoint(a.base, 1.0)


@dataclass(frozen=True)
class ConeSpace(TargetSpace):
    """``CY`` as a target. Batch points are rows ``(base coords..., height)``."""

    base: TargetSpace = field(default_factory=lambda: Sphere(2))
    kind: str = field(default="cone", init=False)
    curvature: str = field(default="NPC", init=False)

    @property
    def coord_dim(self) -> int:
        return self.base.coord_dim + 1

    def split(self, pts):
        pts = np.asarray(pts, dtype=float)
        return pts[..., :-1], pts[..., -1]

    def check(self, pts):
        b, h = self.split(pts)
        if np.any(h < 0):
            raise ValueError("cone: negative height")
        nz = h > 0
        if np.any(nz):
            self.base.check(b[nz])

    def distances(self, a, b):
        ba, ta = self.split(a)
        bb, tb = self.split(b)
        apex = (ta == 0) | (tb == 0)
        d = np.zeros(np.broadcast(ta, tb).shape)
        ok = ~apex
        if np.any(ok):
            ba_, bb_ = np.broadcast_arrays(ba, bb)
            d[ok] = self.base.distances(ba_[ok], bb_[ok])
        return np.where(apex, np.abs(ta - tb), cone_distance_raw(d, ta, tb))

    def to_point(self, row) -> ConePoint:
        b, h = self.split(row)
        return ConePoint(b, h)

    def from_point(self, p: ConePoint) -> np.ndarray:
        return np.concatenate([p.base, [p.height]])

    def interpolate_batch(self, a, b, t):
        t = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1), (len(a),))
        out = []
        for p, q, s in zip(a, b, t):
            z = cone_interpolate(self.base, self.to_point(p), self.to_point(q), float(s))
            base = z.base if not z.is_apex else self.split(p)[0]
            out.append(np.concatenate([base, [z.height]]))
        return np.array(out)

    def _frechet_mean(self, pts, w, tol, max_iter, ball):
        b, h = self.split(pts)
        if isinstance(self.base, (Sphere, Arc)):
            # cone over a sphere (or an arc of a great circle) is flat: [P, t] -> t P
            emb = h[:, None] * (self.base.embed(b[:, 0]) if isinstance(self.base, Arc) else b)
            m = (w[:, None] * emb).sum(axis=0) / w.sum()
            rho = float(np.linalg.norm(m))
            if rho == 0.0:
                return np.concatenate([b[0], [0.0]])
            if isinstance(self.base, Arc):
                ang = float(np.arctan2(m[1], m[0]))
                return np.array([min(max(ang, 0.0), self.base.length), rho])
            return np.concatenate([m / rho, [rho]])
        return super()._frechet_mean(pts, w, tol, max_iter, ball)


__all__ = [
    "ConePoint",
    "ConeSpace",
    "GeodesicError",
    "cone_distance",
    "cone_distance_raw",
    "cone_interpolate",
    "lift",
    "project_unit",
]
