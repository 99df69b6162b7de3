import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from polyharm.oracles import (DELTA_GRID, EPS_GRID, check_cat1_condition, check_interpolation_estimate,
                              check_midpoint_convexity, check_quadrilateral, comparison_triangle,
                              make_report, midpoint_convexity_margins, quadrilateral_sweep, reports_to_csv,
                              run_oracle_suite, sample_midpoint_triples, sample_quadrilaterals, scale_family)
from polyharm.targets import Sphere, Tree, sphere_dist

S2 = Sphere(2)


def _dists(P, Q, R):
    return sphere_dist(P, Q), sphere_dist(Q, R), sphere_dist(R, P)


def test_comparison_triangle_octant():
    P, Q, R = comparison_triangle(math.pi / 2, math.pi / 2, math.pi / 2)
    np.testing.assert_allclose(_dists(P, Q, R), [[math.pi / 2]] * 3, atol=1e-15)


def test_comparison_triangle_reproduces_sides():
    P, Q, R = comparison_triangle(0.3, 0.4, 0.5)
    np.testing.assert_allclose(np.ravel(_dists(P, Q, R)), [0.3, 0.4, 0.5], atol=1e-10)


def test_comparison_triangle_degenerate_is_collinear():
    P, Q, R = comparison_triangle(0.3, 0.4, 0.7)
    # all three on one great circle: the triple product vanishes
    assert abs(np.linalg.det(np.stack([P[0], Q[0], R[0]]))) < 1e-12


@given(st.floats(0.05, 1.5), st.floats(0.05, 1.5), st.floats(0.0, 1.0))
def test_comparison_triangle_property(a, b, f):
    c = abs(a - b) + f * (a + b - abs(a - b))
    if a + b + c >= 2 * math.pi:
        return
    P, Q, R = comparison_triangle(a, b, c)
    np.testing.assert_allclose(np.ravel(_dists(P, Q, R)), [a, b, c], atol=1e-7)


def test_comparison_triangle_rejects_bad_sides():
    with pytest.raises(ValueError):
        comparison_triangle(0.1, 0.1, 0.5)
    with pytest.raises(ValueError):
        comparison_triangle(2.5, 2.5, 2.5)


@pytest.mark.parametrize("space,P,Q,R", [
    (S2, [1, 0, 0], [0, 1, 0], [0, 0, 1]),
    (Tree.tripod(), [0, 0.5], [1, 0.2], [2, 0.9]),
])
def test_cat1_margin_zero_at_endpoints(space, P, Q, R):
    assert check_cat1_condition(space, P, Q, R, 0.0, 0.0) == pytest.approx(0.0, abs=1e-15)


def test_cat1_tripod_margin_nonnegative(rng):
    tri = Tree.tripod()
    for _ in range(50):
        pts = [[rng.integers(0, 3), rng.uniform()] for _ in range(3)]
        t, s = rng.uniform(size=2)
        assert check_cat1_condition(tri, *pts, t, s) >= -1e-9


def test_quadrilateral_small_scale_has_no_violations(rng):
    pts = sample_quadrilaterals(rng, 100_000, 1e-3)
    rep = check_quadrilateral(*pts, 0.01, 1e-3)
    assert rep.samples == 100_000 and rep.violations == 0


def test_quadrilateral_degenerate_equality():
    p = np.array([[0.0, 0.0, 1.0]])
    rep = check_quadrilateral(p, p, p, p, 0.01, 1e-3)
    assert rep.violations == 0 and rep.worst_margin == pytest.approx(0.01 * 1e-6, abs=1e-20)


def test_quadrilateral_rejects_oversized_sides():
    p, q = np.array([[0.0, 0.0, 1.0]]), np.array([[0.0, math.sin(0.1), math.cos(0.1)]])
    with pytest.raises(ValueError):
        check_quadrilateral(p, q, p, q, 0.01, 1e-3)


def test_quadrilateral_planar_limit():
    """Rhombus-like quadruples: normalized excess tends to 0 from below."""
    rng = np.random.default_rng(7)
    worst = []
    for d0 in (0.4, 0.1, 0.025):
        from polyharm.oracles import quadrilateral_excess
        ex = quadrilateral_excess(*sample_quadrilaterals(rng, 20_000, d0)) / d0**2
        worst.append(ex.max())
    assert all(abs(b) < abs(a) for a, b in zip(worst, worst[1:]))


def test_quadrilateral_sweep_thresholds(rng):
    sw = quadrilateral_sweep(rng, 2000)
    assert set(sw.thresholds) == set(EPS_GRID)
    assert sw.violations.shape == (len(EPS_GRID), len(DELTA_GRID))
    # at the smallest scale every epsilon holds
    assert all(sw.thresholds[e] is not None for e in EPS_GRID)
    assert sw.monotone_nondecreasing


def test_interpolation_estimate_trivial_fractions():
    P = np.array([1.0, 0.0, 0.0])
    Q = np.array([math.cos(0.8), math.sin(0.8), 0.0])
    S = np.array([math.cos(0.05), 0.0, math.sin(0.05)])
    m0 = check_interpolation_estimate(P, Q, S, 0.0, 0.0)[0]
    assert abs(m0) < 1e-3  # cubic remainder only
    m1 = check_interpolation_estimate(P, Q, S, 1.0, 1.0)[0]
    assert m1 >= -1e-12


def test_midpoint_convexity_examples():
    Q = np.array([1.0, 0.0, 0.0])
    assert check_midpoint_convexity(Q, Q, Q) == 0.0
    P = np.array([0.3, 0.9, 0.0])
    P /= np.linalg.norm(P)
    assert check_midpoint_convexity(P, Q, Q) == pytest.approx(0.0, abs=1e-15)
    # P on the perpendicular bisector of QR, d_QR = 0.4, d_PQ = 0.6
    Q = np.array([math.cos(0.2), math.sin(0.2), 0.0])
    R = np.array([math.cos(0.2), -math.sin(0.2), 0.0])
    M = np.array([1.0, 0.0, 0.0])
    cosx = math.cos(0.6) / math.cos(0.2)
    x = math.acos(cosx)
    P = np.array([math.cos(x), 0.0, math.sin(x)])
    assert sphere_dist(P, Q) == pytest.approx(0.6, abs=1e-12)
    assert sphere_dist(P, M) == pytest.approx(x, abs=1e-12)
    assert check_midpoint_convexity(P, Q, R) >= 0.0


def test_midpoint_convexity_random(rng):
    m = midpoint_convexity_margins(*sample_midpoint_triples(rng, 100_000))
    assert (m < -1e-9).sum() == 0


def test_report_vacuous_and_csv():
    rep = make_report("x", np.empty(0))
    assert rep.vacuous and rep.passed and rep.samples == 0
    text = reports_to_csv([rep, make_report("y", [-1.0, 1.0], {"a": 1}, 3)])
    lines = text.splitlines()
    assert lines[0].startswith("check,samples,violations")
    assert lines[2].startswith("y,2,1,")


def test_suite_with_zero_samples_is_vacuous():
    res = run_oracle_suite(0, samples=0)
    assert res.passed
    assert all(r.vacuous for r in res.reports)
    assert res.scale == []


def test_adversarial_shift_is_detected():
    base = run_oracle_suite(1, samples=500, scale_samples=0)
    res = run_oracle_suite(1, samples=500, adversarial=1e-3, scale_samples=0)
    assert base.passed and not res.passed
    for b, r in zip(base.reports, res.reports):
        # any check whose slack is below the injected shift must now fail
        if b.worst_margin < 1e-3 - 1e-9:
            assert r.violations > 0, r.name
        else:
            assert r.worst_margin == pytest.approx(b.worst_margin - 1e-3, abs=1e-12)


def test_suite_is_seed_deterministic():
    a = reports_to_csv(run_oracle_suite(4, samples=300, scale_samples=0).reports)
    b = reports_to_csv(run_oracle_suite(4, samples=300, scale_samples=0).reports)
    assert a == b


def test_scale_family_slope(rng):
    res = scale_family(rng, 5000)
    assert len(res.envelope) == 3
    assert res.slope >= 2.8
