import math

import numpy as np
import pytest
from scipy.optimize import least_squares

from omnistereo.backprojection import ViewRay, backproject
from omnistereo.harness import roi_band, synthetic_scene
from omnistereo.projection import project, surface
from omnistereo.triangulation import (CoplanarityError, DivergentRaysError, InfiniteRangeError,
                                      InvalidPixelError, intersect_elevations, midpoint_points,
                                      propagate_uncertainty, range_sweep, triangulate_midpoint,
                                      triangulate_naive, triangulation_jacobian)


def ray(spec, mirror, theta, psi=0.0):
    f = spec.f1 if mirror == 1 else spec.f2
    v = (math.cos(theta) * math.cos(psi), math.cos(theta) * math.sin(psi), math.sin(theta))
    return ViewRay(mirror, theta, psi, tuple(f), v)


def test_symmetric_crossing(big):
    # mirror 1 looks down, mirror 2 looks up: the rays meet at rho = b/2
    p = triangulate_naive(ray(big, 1, math.radians(-45)), ray(big, 2, math.radians(45)), big)
    assert p.rho == pytest.approx(big.baseline / 2, abs=1e-9)
    assert p.rho == pytest.approx(65.805, abs=1e-9)
    assert p.position[2] == pytest.approx(big.c1 - big.baseline / 2, abs=1e-9)


def test_diverging_pair_rejected(big):
    with pytest.raises(DivergentRaysError):
        triangulate_naive(ray(big, 1, math.radians(45)), ray(big, 2, math.radians(-45)), big)


def test_equal_elevations_infinite(big):
    t = math.radians(10)
    with pytest.raises(InfiniteRangeError):
        triangulate_naive(ray(big, 1, t), ray(big, 2, t), big)


def test_different_azimuths_rejected(big):
    with pytest.raises(CoplanarityError):
        triangulate_naive(ray(big, 1, -0.2, 0.0), ray(big, 2, 0.2, 0.1), big)


def test_limiting_rays_give_near_mid_vertex(big):
    s1, s2 = surface(big, 1), surface(big, 2)
    p = intersect_elevations(big, s1.theta_min, s2.theta_max)
    err = np.hypot(p[0] - 65.2, p[2] - 98.4) / np.hypot(65.2, 98.4)
    assert err < 0.05


def test_midpoint_recovers_known_point(big):
    p_w = np.array([500.0, 200.0, 30.0])
    m1, m2 = project(big, p_w, 1), project(big, p_w, 2)
    assert m1 is not None and m2 is not None
    tp = triangulate_midpoint(big, m1, m2)
    assert np.linalg.norm(tp.position - p_w) / np.linalg.norm(p_w) < 1e-6
    assert tp.gap < 1e-9


def test_midpoint_equals_naive_on_coplanar_rays(big):
    pts, m1, m2 = synthetic_scene(big, 200, seed=11)
    for a, b in zip(m1, m2):
        r1, r2 = backproject(big, a, 1), backproject(big, b, 2)
        naive = triangulate_naive(r1, r2, big).position
        mid = triangulate_midpoint(big, a, b).position
        assert np.linalg.norm(naive - mid) <= 1e-9 * max(1.0, np.linalg.norm(mid))


def test_skew_rays_match_least_squares(big):
    p_w = np.array([600.0, -250.0, 40.0])
    m1 = np.asarray(project(big, p_w, 1))
    m2 = np.asarray(project(big, p_w, 2)) + [0.0, 15.0]
    tp = triangulate_midpoint(big, m1, m2)
    assert tp.gap > 0 and np.all(np.isfinite(tp.position))
    r1, r2 = backproject(big, m1, 1), backproject(big, m2, 2)

    def res(lam):
        return (r1.origin + lam[0] * r1.direction) - (r2.origin + lam[1] * r2.direction)

    sol = least_squares(res, [600.0, 600.0], xtol=1e-15, ftol=1e-15, gtol=1e-15)
    q1 = r1.origin + sol.x[0] * r1.direction
    q2 = r2.origin + sol.x[1] * r2.direction
    assert np.allclose(tp.position, 0.5 * (q1 + q2), atol=1e-6)
    assert tp.gap == pytest.approx(np.linalg.norm(q1 - q2), rel=1e-6)


def test_principal_point_is_invalid(big):
    c = [big.camera.u_c, big.camera.v_c]
    with pytest.raises(InvalidPixelError):
        triangulate_midpoint(big, c, c)


def test_batch_round_trip_1000(big):
    pts, m1, m2 = synthetic_scene(big, 1000, seed=5)
    est, gap = midpoint_points(big, m1, m2)
    rel = np.linalg.norm(est - pts, axis=1) / np.linalg.norm(pts, axis=1)
    assert rel.max() < 1e-6


def test_zero_sigma_zero_covariance(big):
    p = np.array([800.0, 0.0, 60.0])
    cov = propagate_uncertainty(big, project(big, p, 1), project(big, p, 2), 0.0)
    assert np.all(cov == 0)


def test_covariance_psd_and_step_stable(big):
    pts, m1, m2 = synthetic_scene(big, 40, seed=9)
    for a, b in zip(m1, m2):
        cov = propagate_uncertainty(big, a, b, 1.0)
        assert np.allclose(cov, cov.T)
        assert np.linalg.eigvalsh(cov).min() >= -1e-9 * np.trace(cov)
        cov_half = propagate_uncertainty(big, a, b, 1.0, step=0.025)
        assert abs(np.trace(cov_half) / np.trace(cov) - 1.0) < 0.005


def test_covariance_scales_with_sigma(big):
    p = np.array([900.0, 100.0, 50.0])
    a, b = project(big, p, 1), project(big, p, 2)
    assert np.allclose(propagate_uncertainty(big, a, b, 2.0), 4 * propagate_uncertainty(big, a, b, 1.0))


@pytest.mark.parametrize("rho", [300.0, 500.0, 1000.0])
def test_uncertainty_dominated_radially(big, rho):
    z = 0.5 * sum(roi_band(big, rho))
    p = np.array([rho, 0.0, z])
    cov = propagate_uncertainty(big, project(big, p, 1), project(big, p, 2), 1.0)
    w, v = np.linalg.eigh(cov)
    major = v[:, -1]
    ang = math.degrees(math.acos(min(1.0, abs(major[0]))))
    assert ang < 25.0


def test_jacobian_shape(big):
    p = np.array([700.0, 0.0, 50.0])
    J = triangulation_jacobian(big, project(big, p, 1), project(big, p, 2))
    assert J.shape == (3, 4) and np.all(np.isfinite(J))


def test_range_sweep_far_limit(big):
    rows = range_sweep(big)
    assert 18000 <= rows[0, 1] <= 28000
    assert np.all(np.diff(rows[:, 1]) < 0)
    # range falls roughly as 1 / disparity
    assert rows[0, 1] / rows[9, 1] == pytest.approx(10, rel=0.15)
