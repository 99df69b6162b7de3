import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polyharm.analytics import (RadialProfile, blow_up, boundary_moment, energy_profile, holder_fit,
                                homogeneity_check, monotonicity_check, octave_radii, optimal_center,
                                order_profile, radial_profile)
from polyharm.domain import MeshResolutionError, build_cone_domain, triangulate
from polyharm.targets import Arc, Euclidean, Sphere, sphere_exp

R1 = Euclidean(1)
S2 = Sphere(2)


@pytest.fixture(scope="module")
def flat():
    return triangulate(build_cone_domain(2 * math.pi), 1.0, 0.02, 2.0)


def homogeneous(mesh, k, theta=2 * math.pi):
    """r^k cos(k phi) in the cone angle coordinate; theta = 2 pi / k keeps it single valued."""
    return (mesh.radius ** k * np.cos(k * mesh.polar_angle()))[:, None]


def test_octave_radii():
    np.testing.assert_allclose(octave_radii(0.5, 2), [0.125, 0.25, 0.5])
    assert len(octave_radii(0.5, 2, 2)) == 5


def test_constant_map_profile(flat):
    vals = np.tile([0.0, 0.0, 1.0], (flat.num_vertices, 1))
    E = energy_profile(flat, S2, vals, [0.1, 0.2])
    assert np.all(E == 0.0)
    bm = boundary_moment(flat, S2, vals, 0.2, resolution=256)
    assert bm.I == 0.0
    np.testing.assert_array_equal(bm.center, [0.0, 0.0, 1.0])
    prof = radial_profile(flat, S2, vals, [0.1, 0.2], resolution=256)
    assert order_profile(prof).infinite


def test_optimal_center_two_point_data():
    P = np.array([1.0, 0.0, 0.0])
    Q = np.array([0.6, 0.8, 0.0])
    vals = np.array([P, Q, P, Q])
    Qs = optimal_center(S2, vals, np.ones(4))
    assert S2.distance(Qs, S2.interpolate(P, Q, 0.5)) < 1e-12


def test_boundary_moment_linear_arc(flat):
    arc = Arc(3.0)
    vals = 1.5 + flat.points[:, :1]
    for s in (0.1, 0.3):
        bm = boundary_moment(flat, arc, vals, s, resolution=4096)
        assert bm.I == pytest.approx(math.pi * s**3, rel=1e-9)
        assert bm.center[0] == pytest.approx(1.5, abs=1e-12)


@pytest.mark.parametrize("k", [1, 2])
def test_order_of_homogeneous_harmonic(flat, k):
    vals = homogeneous(flat, k)
    prof = radial_profile(flat, R1, vals, octave_radii(0.5, 1, 2))
    assert np.all(np.abs(prof.alpha - k) <= 0.02 * k)
    # closed forms
    np.testing.assert_allclose(prof.E, math.pi * k * prof.sigma ** (2 * k), rtol=0.02)
    np.testing.assert_allclose(prof.I, math.pi * prof.sigma ** (2 * k + 1), rtol=0.02)


def test_monotonicity_detector(flat):
    k = 2
    prof = radial_profile(flat, R1, homogeneous(flat, k), octave_radii(0.5, 2))
    assert monotonicity_check(prof, 2 * k) <= 0.01
    assert monotonicity_check(prof, 2 * k - 0.5) == 0.0
    assert monotonicity_check(prof, 2 * k + 0.5) > 0.03


def test_monotonicity_on_synthetic_profile():
    s = octave_radii(1.0, 3)
    prof = RadialProfile(s, s**3, s**4, np.zeros((4, 1)))
    assert monotonicity_check(prof, 3.0) == pytest.approx(0.0, abs=1e-12)
    assert monotonicity_check(prof, 4.0) == pytest.approx(0.5, abs=1e-12)


def test_order_extrapolation_recovers_limit():
    s = octave_radii(1.0, 3)
    alpha = 0.5 + 0.3 * s
    prof = RadialProfile(s, alpha * s**2, s**3, np.zeros((4, 1)))
    est = order_profile(prof)
    assert est.limit == pytest.approx(0.5, abs=1e-12)


def test_unresolved_radius_rejected(flat):
    with pytest.raises(MeshResolutionError):
        energy_profile(flat, R1, homogeneous(flat, 1), [0.01])


@pytest.mark.parametrize("k", [0.5, 2 / 3, 1.0])
def test_holder_exponent_of_homogeneous_data(k):
    mesh = triangulate(build_cone_domain(2 * math.pi / k), 1.0, 0.02, 2.0)
    fit = holder_fit(mesh, R1, homogeneous(mesh, k), policy="anchored", sep_range=(0.005, 0.5))
    assert fit.exponent == pytest.approx(k, rel=0.05)


def test_holder_exponent_of_linear_map(flat):
    fit = holder_fit(flat, R1, flat.points @ np.array([[1.0], [0.5]]), pairs=20000, seed=1)
    assert fit.exponent == pytest.approx(1.0, abs=0.02)


def test_holder_fit_degenerate_for_constant(flat):
    fit = holder_fit(flat, R1, np.zeros((flat.num_vertices, 1)))
    assert fit.degenerate


@pytest.mark.parametrize("k", [1, 2])
def test_blow_up_homogeneous_data(flat, k):
    vals = homogeneous(flat, k)
    frames = [blow_up(flat, R1, vals, lam) for lam in (0.8, 0.4)]
    for f in frames:
        assert f.mu_consistent()
        assert not f.degenerate
    assert max(homogeneity_check(frames, float(k))) < 1e-3


def test_blow_up_constant_map_degenerate(flat):
    f = blow_up(flat, R1, np.ones((flat.num_vertices, 1)), 0.4)
    assert f.degenerate and f.mu == 0.0
    assert math.isnan(homogeneity_check([f], 1.0)[0])


# -- invariance ------------------------------------------------------------

def _rotation(seed):
    q, r = np.linalg.qr(np.random.default_rng(seed).normal(size=(3, 3)))
    return q * np.sign(np.diag(r))


@pytest.fixture(scope="module")
def sphere_data(flat):
    x, y = flat.points[:, 0], flat.points[:, 1]
    v = np.column_stack([0.5 * x + 0.2 * x * y, 0.4 * y * y - 0.3 * y, np.zeros_like(x)])
    return sphere_exp(np.broadcast_to([0.0, 0.0, 1.0], v.shape), v)


@settings(max_examples=8)
@given(st.integers(0, 1000))
def test_isometry_invariance(flat, sphere_data, seed):
    Rm = _rotation(seed)
    radii = [0.25, 0.5]
    p0 = radial_profile(flat, S2, sphere_data, radii, resolution=512)
    p1 = radial_profile(flat, S2, sphere_data @ Rm.T, radii, resolution=512)
    np.testing.assert_allclose(p1.alpha, p0.alpha, rtol=1e-12, atol=1e-12)
    h0 = holder_fit(flat, S2, sphere_data, seed=2)
    h1 = holder_fit(flat, S2, sphere_data @ Rm.T, seed=2)
    assert h1.exponent == pytest.approx(h0.exponent, abs=1e-12)


@pytest.mark.parametrize("c", [0.1, 3.0, 1e3])
def test_rescaling_invariance(flat, c):
    vals = homogeneous(flat, 1) + 0.3 * homogeneous(flat, 2)
    radii = [0.25, 0.5]
    p0 = radial_profile(flat, R1, vals, radii)
    p1 = radial_profile(flat, R1, c * vals, radii)
    np.testing.assert_allclose(p1.alpha, p0.alpha, rtol=1e-12)
    h0 = holder_fit(flat, R1, vals, seed=2)
    h1 = holder_fit(flat, R1, c * vals, seed=2)
    assert h1.exponent == pytest.approx(h0.exponent, abs=1e-12)


def test_rescaling_invariance_arc(flat):
    vals = 0.35 + 0.2 * homogeneous(flat, 1)
    a0 = radial_profile(flat, Arc(0.7), vals, [0.25, 0.5]).alpha
    a1 = radial_profile(flat, Arc(2.8), 4 * vals, [0.25, 0.5]).alpha
    np.testing.assert_allclose(a1, a0, rtol=1e-12)
