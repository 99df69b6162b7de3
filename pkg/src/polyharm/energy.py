"""Discrete energy of piecewise-linear maps and a Gauss-Seidel minimizer.

On each simplex the P1 stiffness matrix ``K`` of the metric ``g`` (frozen at
the barycenter) defines edge weights ``w_ij = -K_ij``.  The energy of a map
into a metric space is ``sum_s sum_{i<j} w_ij d^2(u_i, u_j)``, which equals
``u^T K u`` for real-valued maps.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
import scipy.sparse as sp

from .cone import ConeSpace
from .domain import Mesh, MetricField
from .targets import Arc, BallConstraint, Euclidean, Sphere, TargetSpace, sphere_dist

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Stiffness:
    K: np.ndarray  # (S, n+1, n+1) local stiffness
    vol_g: np.ndarray  # (S,)
    grads: np.ndarray  # (S, n+1, n) Euclidean gradients of barycentric coordinates
    ginv: np.ndarray  # (S, n, n)
    Dinv: np.ndarray  # (S, n, n)

    @property
    def weights(self) -> np.ndarray:
        return -self.K


def stiffness(mesh: Mesh, metric: MetricField | None = None) -> Stiffness:
    metric = metric or MetricField("euclidean", mesh.n)
    X = mesh.simplex_coords
    n = mesh.n
    D = X[:, 1:, :] - X[:, :1, :]
    det = np.linalg.det(D)
    if np.any(np.abs(det) / math.factorial(n) <= 1e-14):
        raise ValueError("degenerate simplex (volume <= 1e-14)")
    Dinv = np.linalg.inv(D)
    g_rest = np.swapaxes(Dinv, 1, 2)  # rows: grad lambda_a, a = 1..n
    grads = np.concatenate([-g_rest.sum(axis=1, keepdims=True), g_rest], axis=1)
    G = metric.matrix(mesh.simplex_wedge, X.mean(axis=1))
    ginv = np.linalg.inv(G)
    vol = np.abs(det) / math.factorial(n) * np.sqrt(np.linalg.det(G))
    K = vol[:, None, None] * np.einsum("sai,sij,sbj->sab", grads, ginv, grads)
    return Stiffness(K, vol, grads, ginv, Dinv)


def _pairs(n1: int):
    return [(i, j) for i in range(n1) for j in range(i + 1, n1)]


def edge_sq_distances(mesh: Mesh, space: TargetSpace, values: np.ndarray) -> np.ndarray:
    """``d^2(u_i, u_j)`` for every simplex and local pair, shape (S, P)."""
    s = mesh.simplices
    out = []
    for i, j in _pairs(s.shape[1]):
        out.append(space.distances(values[s[:, i]], values[s[:, j]]) ** 2)
    return np.stack(out, axis=1)


def simplex_energies(mesh: Mesh, space: TargetSpace, values: np.ndarray,
                     stiff: Stiffness | None = None, metric: MetricField | None = None) -> np.ndarray:
    stiff = stiff or stiffness(mesh, metric)
    d2 = edge_sq_distances(mesh, space, values)
    w = np.stack([stiff.weights[:, i, j] for i, j in _pairs(mesh.n + 1)], axis=1)
    return (w * d2).sum(axis=1)


def simplex_energy(mesh: Mesh, space: TargetSpace, values: np.ndarray, s: int,
                   metric: MetricField | None = None) -> float:
    stiff = stiffness(mesh, metric)
    return float(simplex_energies(mesh, space, values, stiff)[s])


@dataclass
class EnergyReport:
    total: float
    per_simplex: np.ndarray
    iterations: int = 0
    final_move: float = 0.0
    history: list = field(default_factory=list)
    converged: bool = True

    @property
    def monotone(self) -> bool:
        h = np.asarray(self.history)
        return bool(np.all(np.diff(h) <= 1e-12 * max(1.0, abs(h[0]) if len(h) else 1.0)))


def total_energy(mesh: Mesh, space: TargetSpace, values: np.ndarray,
                 metric: MetricField | None = None, stiff: Stiffness | None = None) -> EnergyReport:
    e = simplex_energies(mesh, space, values, stiff, metric)
    return EnergyReport(float(e.sum()), e)


# ---------------------------------------------------------------------------
# Directional energies


def pullback_matrices(mesh: Mesh, space: TargetSpace, values: np.ndarray,
                      stiff: Stiffness | None = None) -> np.ndarray:
    """Per-simplex symmetric matrix ``Pi`` with ``|f_*(Z)|^2 = Z^T Pi Z``.

    Built by polarization from squared edge distances at vertex 0, then pulled
    back through the inverse edge matrix.
    """
    stiff = stiff or stiffness(mesh)
    s = mesh.simplices
    n = mesh.n
    d0 = np.stack([space.distances(values[s[:, 0]], values[s[:, a]]) ** 2 for a in range(1, n + 1)], 1)
    M = np.empty((len(s), n, n))
    for a in range(n):
        M[:, a, a] = d0[:, a]
        for b in range(a + 1, n):
            dab = space.distances(values[s[:, a + 1]], values[s[:, b + 1]]) ** 2
            M[:, a, b] = M[:, b, a] = 0.5 * (d0[:, a] + d0[:, b] - dab)
    Dinv = stiff.Dinv
    return np.einsum("sia,sab,sjb->sij", Dinv, M, Dinv)


def directional_energy(mesh: Mesh, space: TargetSpace, values: np.ndarray, Z,
                       metric: MetricField | None = None, stiff: Stiffness | None = None) -> float:
    """``int |f_*(Z)|^2 dmu_g`` for a simplexwise constant field ``Z``."""
    return pullback_form(mesh, space, values, Z, Z, metric, stiff)


def pullback_form(mesh: Mesh, space: TargetSpace, values: np.ndarray, Z, W,
                  metric: MetricField | None = None, stiff: Stiffness | None = None) -> float:
    stiff = stiff or stiffness(mesh, metric)
    Pi = pullback_matrices(mesh, space, values, stiff)
    Z = np.broadcast_to(np.asarray(Z, dtype=float), (len(Pi), mesh.n))
    W = np.broadcast_to(np.asarray(W, dtype=float), (len(Pi), mesh.n))
    # symmetrized bilinear form; equals 1/4(|Z+W|^2 - |Z-W|^2)
    return float(np.sum(stiff.vol_g * np.einsum("si,sij,sj->s", Z, Pi, W)))


# ---------------------------------------------------------------------------
# Graph structure


@dataclass(frozen=True)
class VertexGraph:
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    edges: np.ndarray  # (E, 2), i < j
    edge_weights: np.ndarray


def vertex_graph(mesh: Mesh, stiff: Stiffness) -> VertexGraph:
    s = mesh.simplices
    rows, cols, vals = [], [], []
    for i, j in _pairs(s.shape[1]):
        w = -stiff.K[:, i, j]
        rows += [s[:, i], s[:, j]]
        cols += [s[:, j], s[:, i]]
        vals += [w, w]
    N = mesh.num_vertices
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    U = sp.triu(A, k=1).tocoo()
    edges = np.column_stack([U.row, U.col])
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    return VertexGraph(A.indptr.astype(np.int64), A.indices.astype(np.int64), A.data.copy(),
                       edges[order], U.data[order])


def graph_energy(graph: VertexGraph, space: TargetSpace, values: np.ndarray) -> float:
    e = graph.edges
    d = space.distances(values[e[:, 0]], values[e[:, 1]])
    return float(np.sum(graph.edge_weights * d * d))


def stiffness_matrix(mesh: Mesh, metric: MetricField | None = None) -> sp.csr_matrix:
    """Global P1 stiffness matrix (for the linear FEM oracle)."""
    st = stiffness(mesh, metric)
    s = mesh.simplices
    k = s.shape[1]
    r = np.repeat(s, k, axis=1).ravel()
    c = np.tile(s, (1, k)).ravel()
    N = mesh.num_vertices
    return sp.coo_matrix((st.K.ravel(), (r, c)), shape=(N, N)).tocsr()


# ---------------------------------------------------------------------------
# Local relaxation kernels


@numba.njit(cache=True)
def _sweep_box(indptr, indices, weights, X, free, lo, hi, omega):
    N, k = X.shape
    max_move = 0.0
    for i in range(N):
        if not free[i]:
            continue
        W = 0.0
        m = np.zeros(k)
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            w = weights[p]
            W += w
            for c in range(k):
                m[c] += w * X[j, c]
        if W <= 0.0:
            continue
        mv = 0.0
        for c in range(k):
            target = m[c] / W
            y = X[i, c] + omega * (target - X[i, c])
            if y < lo[c]:
                y = lo[c]
            if y > hi[c]:
                y = hi[c]
            mv += (y - X[i, c]) ** 2
            X[i, c] = y
        mv = math.sqrt(mv)
        if mv > max_move:
            max_move = mv
    return max_move


@numba.njit(cache=True)
def _sdist(a, b):
    s = 0.0
    t = 0.0
    for c in range(a.shape[0]):
        s += (a[c] - b[c]) ** 2
        t += (a[c] + b[c]) ** 2
    return 2.0 * math.atan2(math.sqrt(s), math.sqrt(t))


@numba.njit(cache=True)
def _slog(x, u, out):
    th = _sdist(x, u)
    dot = 0.0
    for c in range(x.shape[0]):
        dot += x[c] * u[c]
    nv = 0.0
    for c in range(x.shape[0]):
        out[c] = u[c] - dot * x[c]
        nv += out[c] ** 2
    nv = math.sqrt(nv)
    if nv > 0.0:
        for c in range(x.shape[0]):
            out[c] *= th / nv
    else:
        for c in range(x.shape[0]):
            out[c] = 0.0


@numba.njit(cache=True)
def _sexp(x, v, out):
    nv = 0.0
    for c in range(x.shape[0]):
        nv += v[c] ** 2
    nv = math.sqrt(nv)
    sc = math.sin(nv) / nv if nv > 0 else 1.0
    nrm = 0.0
    for c in range(x.shape[0]):
        out[c] = math.cos(nv) * x[c] + sc * v[c]
        nrm += out[c] ** 2
    nrm = math.sqrt(nrm)
    for c in range(x.shape[0]):
        out[c] /= nrm


@numba.njit(cache=True)
def _local_obj(x, X, indptr, indices, weights, i):
    f = 0.0
    for p in range(indptr[i], indptr[i + 1]):
        d = _sdist(x, X[indices[p]])
        f += weights[p] * d * d
    return f


@numba.njit(cache=True)
def _ball_project(y, center, tau, out, tmp):
    d = _sdist(center, y)
    if tau <= 0.0 or d <= tau:
        for c in range(y.shape[0]):
            out[c] = y[c]
        return
    _slog(center, y, tmp)
    for c in range(y.shape[0]):
        tmp[c] *= tau / d
    _sexp(center, tmp, out)


@numba.njit(cache=True)
def _sweep_sphere(indptr, indices, weights, X, free, center, tau, omega, inner_tol, inner_max):
    N, k = X.shape
    max_move = 0.0
    v = np.zeros(k)
    tmp = np.zeros(k)
    x = np.zeros(k)
    y = np.zeros(k)
    z = np.zeros(k)
    for i in range(N):
        if not free[i]:
            continue
        W = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            W += weights[p]
        if W <= 0.0:
            continue
        for c in range(k):
            x[c] = X[i, c]
        f0 = _local_obj(x, X, indptr, indices, weights, i)
        # weighted Karcher iteration from the current value; with negative
        # weights each step is a backtracked gradient step
        for it in range(inner_max):
            for c in range(k):
                v[c] = 0.0
            for p in range(indptr[i], indptr[i + 1]):
                _slog(x, X[indices[p]], tmp)
                for c in range(k):
                    v[c] += weights[p] / W * tmp[c]
            nv = 0.0
            for c in range(k):
                nv += v[c] ** 2
            nv = math.sqrt(nv)
            fx = _local_obj(x, X, indptr, indices, weights, i)
            step = 1.0
            accepted = False
            for _ in range(40):
                for c in range(k):
                    tmp[c] = step * v[c]
                _sexp(x, tmp, y)
                if _local_obj(y, X, indptr, indices, weights, i) <= fx:
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                break
            for c in range(k):
                x[c] = y[c]
            if step * nv < inner_tol:
                break
        # over-relax along the geodesic from the old value to the local minimizer
        for c in range(k):
            z[c] = X[i, c]
        if omega != 1.0:
            _slog(z, x, tmp)
            for c in range(k):
                tmp[c] *= omega
            _sexp(z, tmp, y)
            _ball_project(y, center, tau, v, tmp)
            # keep the relaxed point whenever it still improves on the old value
            if _local_obj(v, X, indptr, indices, weights, i) <= f0:
                for c in range(k):
                    x[c] = v[c]
        _ball_project(x, center, tau, y, tmp)
        if _local_obj(y, X, indptr, indices, weights, i) > f0:
            continue
        mv = _sdist(z, y)
        for c in range(k):
            X[i, c] = y[c]
        if mv > max_move:
            max_move = mv
    return max_move


def _sweep_generic(graph: VertexGraph, space: TargetSpace, X, free, ball):
    max_move = 0.0
    for i in np.nonzero(free)[0]:
        a, b = graph.indptr[i], graph.indptr[i + 1]
        nb = graph.indices[a:b]
        w = graph.weights[a:b]
        pos = w > 0
        if not np.any(pos):
            continue

        def F(x):
            d = space.distances(np.broadcast_to(x, (len(nb), X.shape[1])), X[nb])
            return float(np.sum(w * d * d))

        old = X[i].copy()
        f0 = F(old)
        cand = space.frechet_mean(X[nb][pos], w[pos])
        if ball is not None:
            cand = space.project_to_ball(cand, ball)
        if F(cand) > f0:
            continue
        mv = float(space.distances(old[None], cand[None])[0])
        X[i] = cand
        max_move = max(max_move, mv)
    return max_move


# ---------------------------------------------------------------------------
# Maps and the minimizer


@dataclass
class PLMap:
    mesh: Mesh
    space: TargetSpace
    values: np.ndarray
    ball: BallConstraint | None = None

    def check(self, trace: np.ndarray | None = None, tol: float = 1e-9) -> None:
        self.space.check(self.values)
        if self.ball is not None:
            c = np.broadcast_to(self.ball.center, self.values.shape)
            d = self.space.distances(c, self.values)
            if np.any(d > self.ball.radius + tol):
                raise ValueError("map leaves its ball constraint")
        if trace is not None:
            b = self.mesh.boundary
            if not np.array_equal(self.values[b], trace[b]):
                raise ValueError("boundary values differ from the trace")


def _box(space: TargetSpace, ball: BallConstraint | None):
    k = space.coord_dim
    lo, hi = np.full(k, -np.inf), np.full(k, np.inf)
    if isinstance(space, Arc):
        lo[:], hi[:] = 0.0, space.length
    if ball is not None:
        lo = np.maximum(lo, ball.center - ball.radius)
        hi = np.minimum(hi, ball.center + ball.radius)
    return lo, hi


def initial_values(mesh: Mesh, space: TargetSpace, trace: np.ndarray,
                   ball: BallConstraint | None = None,
                   metric: MetricField | None = None) -> np.ndarray:
    """Starting guess for the relaxation.

    Interior vertices take the Frechet mean of the boundary data.  For sphere
    targets the guess is refined by the linear harmonic extension of the trace
    in the log chart at that mean, mapped back by the exponential map.
    """
    X = np.array(trace, dtype=float, copy=True)
    b = mesh.boundary
    mean = space.frechet_mean(trace[b], ball=ball)
    if ball is not None:
        mean = space.project_to_ball(mean, ball)
    X[~b] = mean
    if isinstance(space, Sphere) and (~b).any():
        from scipy.sparse.linalg import spsolve
        from .targets import sphere_exp, sphere_log
        K = stiffness_matrix(mesh, metric)
        V = sphere_log(np.broadcast_to(mean, X[b].shape), X[b])
        A = K[~b][:, ~b].tocsc()
        rhs = -(K[~b][:, b] @ V)
        T = np.column_stack([spsolve(A, rhs[:, c]) for c in range(V.shape[1])])
        Y = sphere_exp(np.broadcast_to(mean, T.shape), T)
        if ball is not None:
            Y = space.project_batch(Y, ball)
        X[~b] = Y
    return X


def write_checkpoint(path, values: np.ndarray) -> None:
    lines = [f"{i} " + " ".join(repr(float(c)) for c in row) for i, row in enumerate(values)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_checkpoint(path) -> np.ndarray:
    rows = []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if parts:
            rows.append((int(parts[0]), [float(c) for c in parts[1:]]))
    rows.sort()
    return np.array([r for _, r in rows])


def minimize(mesh: Mesh, space: TargetSpace, trace: np.ndarray, ball: BallConstraint | None = None,
             metric: MetricField | None = None, tol: float = 1e-9, max_sweeps: int = 100_000,
             omega: float = 1.0, init: np.ndarray | None = None, checkpoint=None,
             checkpoint_every: int = 0) -> tuple[PLMap, EnergyReport]:
    """Gauss-Seidel relaxation: each free vertex moves to the weighted mean of
    its neighbours (optionally over-relaxed by ``omega``), then into the ball.

    Boundary vertices are pinned to ``trace``.  The energy history is
    nonincreasing because every accepted update lowers the local objective.
    """
    trace = space.batch(trace)
    if len(trace) != mesh.num_vertices:
        raise ValueError("trace must give a value for every vertex")
    if ball is not None:
        tb = trace[mesh.boundary]
        if np.any(space.distances(np.broadcast_to(ball.center, tb.shape), tb) > ball.radius + 1e-12):
            raise ValueError("trace leaves the closed ball")
    if not (0.0 < omega < 2.0):
        raise ValueError("over-relaxation factor must lie in (0, 2)")
    stiff = stiffness(mesh, metric)
    graph = vertex_graph(mesh, stiff)
    if init is not None:
        X = space.batch(init).copy()
    elif checkpoint is not None and Path(checkpoint).exists():
        X = read_checkpoint(checkpoint)
    else:
        X = initial_values(mesh, space, trace, ball, metric)
    X[mesh.boundary] = trace[mesh.boundary]
    free = ~mesh.boundary
    history = [graph_energy(graph, space, X)]
    move = math.inf
    sweeps = 0
    if isinstance(space, (Euclidean, Arc)):
        lo, hi = _box(space, ball)
        X = np.ascontiguousarray(X)

        def sweep():
            return _sweep_box(graph.indptr, graph.indices, graph.weights, X, free, lo, hi, omega)
    elif isinstance(space, Sphere):
        center = np.zeros(space.coord_dim) if ball is None else np.asarray(ball.center, float)
        tau = 0.0 if ball is None else float(ball.radius)
        X = np.ascontiguousarray(X)

        def sweep():
            return _sweep_sphere(graph.indptr, graph.indices, graph.weights, X, free, center, tau,
                                 omega, 1e-14, 50)
    else:
        def sweep():
            return _sweep_generic(graph, space, X, free, ball)
    while sweeps < max_sweeps:
        move = sweep()
        sweeps += 1
        e = graph_energy(graph, space, X)
        if e > history[-1] + 1e-12 * max(1.0, abs(history[-1])):
            raise RuntimeError(f"energy increased in sweep {sweeps}: {history[-1]!r} -> {e!r}")
        history.append(e)
        if checkpoint is not None and checkpoint_every and sweeps % checkpoint_every == 0:
            write_checkpoint(checkpoint, X)
        if move < tol:
            break
    converged = move < tol
    if not converged:
        log.warning("minimize: no convergence after %d sweeps (last move %.3e)", sweeps, move)
    if checkpoint is not None:
        write_checkpoint(checkpoint, X)
    per = simplex_energies(mesh, space, X, stiff)
    rep = EnergyReport(float(per.sum()), per, sweeps, float(move), history, converged)
    return PLMap(mesh, space, X, ball), rep


def lifted_values(space: TargetSpace, values: np.ndarray) -> tuple[ConeSpace, np.ndarray]:
    """The lifted map ``x -> [u(x), 1]`` as cone-valued vertex data."""
    cs = ConeSpace(space)
    return cs, np.column_stack([values, np.ones(len(values))])


__all__ = [
    "EnergyReport", "PLMap", "Stiffness", "VertexGraph", "directional_energy", "edge_sq_distances",
    "graph_energy", "initial_values", "lifted_values", "minimize", "pullback_form", "pullback_matrices",
    "read_checkpoint", "simplex_energies", "simplex_energy", "sphere_dist", "stiffness",
    "stiffness_matrix", "total_energy", "vertex_graph", "write_checkpoint",
]
