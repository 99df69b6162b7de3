import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from polyharm.domain import (Gluing, LocalModel, MeshResolutionError, PointLocator, UnsupportedGluingError, Wedge,
                             audit_metric, ball_and_sphere, ball_fractions, build_book, build_cone_domain,
                             build_product, build_wedge, make_metric, metric_eval, read_mesh, sphere_sample,
                             triangle_disk_area, triangulate, write_mesh)

TWO_PI = 2 * math.pi


# -- local models ----------------------------------------------------------

def test_book_pages():
    half = build_book(1)
    assert half.codim == 1 and half.total_angle == pytest.approx(math.pi)
    plane = build_book(2)
    assert plane.total_angle == pytest.approx(TWO_PI) and plane.admissible
    tri = build_book(3)
    assert len(tri.wedges) == 3 and tri.admissible
    # all three pages share both rays of the spine
    assert len({tri.side_class(w, 0) for w in range(3)}) == 1
    assert len({tri.side_class(w, 1) for w in range(3)}) == 1


@pytest.mark.parametrize("theta", [TWO_PI, 4 * math.pi, 3 * math.pi / 2, 3 * math.pi])
def test_cone_total_angle(theta):
    m = build_cone_domain(theta)
    assert m.total_angle == pytest.approx(theta, abs=1e-12)
    assert m.admissible
    assert all(w.angle <= math.pi + 1e-12 for w in m.wedges)


def test_nonconvex_wedge_rejected():
    with pytest.raises(ValueError):
        LocalModel("wedge", 2, 0, (Wedge(0.0, 4.0),), ())


def test_exotic_gluing_rejected():
    with pytest.raises(UnsupportedGluingError):
        LocalModel("cone", 2, 0, (Wedge(0, 1.0), Wedge(1.0, 2.0)), (Gluing(0, 1, 1, 1, 0.0),))


def test_cone_intrinsic_distance():
    m = build_cone_domain(4 * math.pi)
    # two points at angular separation 2 pi on the doubled cone: through the tip
    p = np.array([[0.5, 0.0]])
    w_far = next(i for i, w in enumerate(m.wedges) if w.start <= TWO_PI < w.stop)
    d = m.distance([0], p, [w_far], p)
    assert d[0] == pytest.approx(1.0, abs=1e-12)


def test_book_intrinsic_distance_across_spine():
    m = build_book(3)
    a = np.array([[0.3, 0.4]])
    b = np.array([[0.3, 0.4]])
    assert m.distance([0], a, [1], b)[0] == pytest.approx(0.8, abs=1e-12)
    assert m.distance([1], a, [1], b)[0] == 0.0


# -- meshes ----------------------------------------------------------------

@pytest.mark.parametrize("h", [0.2, 0.1])
def test_flat_disk_mesh_audit(h):
    mesh = triangulate(build_cone_domain(TWO_PI), 1.0, h)
    a = mesh.audit()
    assert a["orphans"] == 0 and a["inverted"] == 0
    assert a["min_volume"] > 0.05 * h**2
    assert 0.5 / h**2 < len(mesh.simplices) < 20 / h**2
    assert mesh.volumes().sum() == pytest.approx(math.pi, rel=2 * h**2)
    assert np.allclose(mesh.radius[mesh.boundary], 1.0)


def test_mesh_needs_resolution():
    with pytest.raises(ValueError):
        triangulate(build_cone_domain(TWO_PI), 1.0, 0.3)


@pytest.mark.parametrize("model", [build_cone_domain(4 * math.pi), build_book(3), build_cone_domain(3 * math.pi)])
def test_gluing_consistency(model):
    """An edge shared by simplices of different wedges has one length."""
    mesh = triangulate(model, 1.0, 0.1)
    X = mesh.simplex_coords
    seen = {}
    for s, (tri, coords) in enumerate(zip(mesh.simplices, X)):
        for i in range(3):
            for j in range(i + 1, 3):
                key = tuple(sorted((tri[i], tri[j])))
                L = np.linalg.norm(coords[i] - coords[j])
                if key in seen:
                    assert L == pytest.approx(seen[key], abs=1e-12)
                else:
                    seen[key] = L


def test_cone_4pi_angle_sum_at_tip():
    mesh = triangulate(build_cone_domain(4 * math.pi), 1.0, 0.1)
    tip = int(np.argmin(mesh.radius))
    total = 0.0
    for tri, X in zip(mesh.simplices, mesh.simplex_coords):
        if tip in tri:
            k = list(tri).index(tip)
            u, v = (X[j] - X[k] for j in range(3) if j != k)
            total += math.acos(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))
    assert total == pytest.approx(4 * math.pi, abs=1e-10)


def test_graded_mesh_refines_center():
    a = triangulate(build_cone_domain(TWO_PI), 1.0, 0.05, 1.0)
    b = triangulate(build_cone_domain(TWO_PI), 1.0, 0.05, 2.0)
    near = lambda m: np.median(m.edge_lengths()[np.linalg.norm(m.simplex_coords, axis=-1).max(axis=1) < 0.1])
    assert near(b) < 0.5 * near(a)


def test_mesh_roundtrip_bit_exact(tmp_path):
    mesh = triangulate(build_book(3), 1.0, 0.1, 2.0)
    write_mesh(mesh, tmp_path / "m.txt")
    back = read_mesh(tmp_path / "m.txt")
    assert np.array_equal(back.points, mesh.points)
    assert np.array_equal(back.simplices, mesh.simplices)
    assert np.array_equal(back.home, mesh.home)
    assert np.array_equal(back.boundary, mesh.boundary)
    assert back.model == mesh.model and (back.r, back.h, back.grading) == (mesh.r, mesh.h, mesh.grading)
    write_mesh(back, tmp_path / "m2.txt")
    assert (tmp_path / "m.txt").read_bytes() == (tmp_path / "m2.txt").read_bytes()


def test_mesh_file_with_unknown_gluing_rejected(tmp_path):
    mesh = triangulate(build_cone_domain(TWO_PI), 1.0, 0.2)
    write_mesh(mesh, tmp_path / "m.txt")
    text = (tmp_path / "m.txt").read_text().replace("\nG 0 ", "\nG 9 ", 1)
    (tmp_path / "bad.txt").write_text(text)
    with pytest.raises((UnsupportedGluingError, IndexError, ValueError)):
        read_mesh(tmp_path / "bad.txt")


def test_three_dimensional_product():
    model = build_product(build_cone_domain(4 * math.pi))
    assert model.n == 3 and model.codim == 2
    mesh = triangulate(model, 1.0, 0.2)
    a = mesh.audit()
    assert a["inverted"] == 0 and a["orphans"] == 0
    assert mesh.simplices.shape[1] == 4
    # cylinder of radius 1, height 2 on a doubled cone
    assert mesh.volumes().sum() == pytest.approx(2 * 2 * math.pi, rel=0.05)


# -- metric fields ---------------------------------------------------------

def test_euclidean_metric_identity():
    m = make_metric(None)
    s = metric_eval(m, 0, np.array([[0.3, 0.2], [0.0, 0.5]]))
    assert np.array_equal(s.g, np.broadcast_to(np.eye(2), (2, 2, 2)))
    assert np.allclose(s.volume_density, 1.0) and np.allclose(s.boundary_density, 1.0)
    assert m.normalized


def test_conformal_metric_audit():
    m = make_metric({"name": "conformal", "a": 0.1}, 2, 1.0)
    rep = audit_metric(m, build_cone_domain(TWO_PI), 1.0)
    assert rep["passed"] and rep["lipschitz_observed"] <= 0.1 + 1e-12
    assert m.normalized


def test_metric_rejects_nonelliptic():
    with pytest.raises(ValueError):
        make_metric({"name": "anisotropic", "matrix": [[1, 0], [0, -1]]})


# -- balls and spheres -----------------------------------------------------

def test_triangle_disk_area_limits():
    A, B, C = np.array([0.0, 0.0]), np.array([1.0, 0.0]), np.array([0.0, 1.0])
    assert triangle_disk_area(A, B, C, 10.0) == pytest.approx(0.5, abs=1e-14)
    assert triangle_disk_area(A, B, C, 0.5) == pytest.approx(math.pi * 0.25 / 4, abs=1e-14)


@given(st.floats(0.05, 1.5), st.integers(0, 10**6))
def test_triangle_disk_area_against_polygon_clip(sigma, seed):
    shapely = pytest.importorskip("shapely.geometry")
    rng = np.random.default_rng(seed)
    A, B, C = rng.uniform(-1, 1, (3, 2))
    tri = shapely.Polygon([A, B, C])
    if tri.area < 1e-3:
        return
    disk = shapely.Point(0, 0).buffer(sigma, quad_segs=4096)
    ref = tri.intersection(disk).area
    # the polygonal disk underestimates by ~ pi sigma^2 (pi / 8192)^2 / 3
    assert triangle_disk_area(A, B, C, sigma) == pytest.approx(ref, abs=2e-6)


def test_flat_disk_circumference():
    mesh = triangulate(build_cone_domain(TWO_PI), 1.0, 0.05)
    frac, samp = ball_and_sphere(mesh, 0.5, resolution=10_000)
    assert samp.weights.sum() == pytest.approx(math.pi, abs=1e-6)
    assert np.dot(frac, mesh.volumes()) == pytest.approx(math.pi / 4, abs=1e-12)


def test_cone_4pi_circumference():
    mesh = triangulate(build_cone_domain(4 * math.pi), 1.0, 0.05)
    _, samp = ball_and_sphere(mesh, 0.5, resolution=10_000)
    assert samp.weights.sum() == pytest.approx(2 * math.pi, abs=1e-6)


def test_book3_circumference():
    mesh = triangulate(build_book(3), 1.0, 0.05)
    _, samp = ball_and_sphere(mesh, 0.5, resolution=10_000)
    assert samp.weights.sum() == pytest.approx(3 * math.pi * 0.5, abs=1e-6)


def test_conformal_circumference():
    mesh = triangulate(build_cone_domain(TWO_PI), 1.0, 0.05)
    m = make_metric({"name": "conformal", "a": 0.1})
    samp = sphere_sample(mesh, 0.5, m, 4096)
    # g = (1 + a r) I: line element scales by sqrt(1 + a r)
    assert samp.weights.sum() == pytest.approx(math.pi * math.sqrt(1.05), abs=1e-9)


def test_unresolved_ball_rejected():
    mesh = triangulate(build_cone_domain(TWO_PI), 1.0, 0.1)
    with pytest.raises(MeshResolutionError):
        ball_and_sphere(mesh, 0.2)


def test_qmc_ball_fractions_3d():
    mesh = triangulate(build_product(build_cone_domain(TWO_PI)), 1.0, 0.2)
    vol = np.dot(ball_fractions(mesh, 0.8), mesh.volumes())
    assert vol == pytest.approx(4 / 3 * math.pi * 0.8**3, rel=0.05)


def test_point_locator():
    mesh = triangulate(build_cone_domain(4 * math.pi), 1.0, 0.1)
    loc = PointLocator(mesh)
    rng = np.random.default_rng(0)
    w = rng.integers(0, len(mesh.model.wedges), 200)
    starts = np.array([mesh.model.wedges[i].start for i in w])
    ang = np.array([mesh.model.wedges[i].angle for i in w])
    phi = starts + rng.uniform(0, 1, 200) * ang
    rho = rng.uniform(0, 0.95, 200)
    x = np.column_stack([rho * np.cos(phi), rho * np.sin(phi)])
    sid, bary = loc.locate(w, x)
    assert np.all(bary >= -1e-10)
    rec = np.einsum("mv,mvk->mk", bary, mesh.simplex_coords[sid])
    np.testing.assert_allclose(rec, x, atol=1e-12)
