import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from omnistereo.harness import synthetic_scene
from omnistereo.projection import (DegenerateRayError, ExternalPositionError, image_radial_bounds,
                                   lambda1, project, project_points, reflect, reflect_m1,
                                   reflex_transform, surface)
from omnistereo.rig import BIG_RIG, surface_at_elevation


def residual(s, p):
    r = math.hypot(p[0], p[1])
    return abs((p[2] - s.z0) ** 2 / s.a ** 2 - r ** 2 / s.b ** 2 - 1.0)


def test_lambda1_lands_on_hyperboloid(big):
    p_w = np.array([1000.0, 0.0, 0.0])
    lam = lambda1(big, p_w)
    p1 = big.f1 + lam * (p_w - big.f1)
    assert residual(surface(big, 1), p1) < 1e-9


def test_on_axis_point_goes_to_lower_sheet(big):
    assert lambda1(big, [0.0, 0.0, big.c1 + 500.0]) < 0
    assert project(big, [0.0, 0.0, big.c1 + 500.0], 1) is None
    assert project(big, [0.0, 0.0, big.c1 + 500.0], 2) is None


def test_focus_is_degenerate(big):
    with pytest.raises(DegenerateRayError):
        lambda1(big, big.f1)


def test_reflect_m1_keeps_azimuth(big):
    p = reflect_m1(big, [1000.0, 0.0, 0.0])
    assert p.y == 0.0 and p.x > 0


def test_reflect_at_theta_max_hits_rim(big):
    s1 = surface(big, 1)
    p_w = big.f1 + 800.0 * np.array([math.cos(s1.theta_max), 0.0, math.sin(s1.theta_max)])
    p = reflect(big, p_w, 1)
    assert math.hypot(p.x, p.y) == pytest.approx(big.r_sys, abs=1e-6)


def test_inside_mirror_volume_rejected(big):
    s1 = surface(big, 1)
    z = s1.z0 + s1.a + 5.0
    with pytest.raises(ExternalPositionError):
        reflect(big, [1.0, 0.0, z], 1)


def test_reflex_transform(big):
    assert np.allclose(reflex_transform(big, [0, 0, 0]), [0, 0, big.d])
    assert np.allclose(reflex_transform(big, [5, -3, big.d]), [5, -3, 0])


@settings(max_examples=100, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_reflex_transform_involution(x, y, z):
    p = np.array([x, y, z])
    assert np.allclose(reflex_transform(BIG_RIG, reflex_transform(BIG_RIG, p)), p)


def test_radial_bounds_inside_image(big):
    w, h = big.camera.width, big.camera.height
    for mirror in (1, 2):
        lo, hi = image_radial_bounds(big, mirror)
        assert 0 < lo < hi <= min(w, h) / 2


def test_radial_bounds_match_rim_projection(big):
    # project a far world point along each limiting elevation
    for mirror in (1, 2):
        s = surface(big, mirror)
        lo, hi = image_radial_bounds(big, mirror)
        radii = []
        for th in (s.theta_min, s.theta_max):
            p = np.asarray(s.focus) + 1e4 * np.array([math.cos(th), 0.0, math.sin(th)])
            m = project_points(big, p * (1 - 1e-12) + np.asarray(s.focus) * 1e-12, mirror)
            radii.append(abs(m[0] - big.camera.u_c))
        assert sorted(radii) == pytest.approx([lo, hi], abs=1e-4)


def test_reflection_points_on_surface(big):
    pts, _, _ = synthetic_scene(big, 300, seed=3)
    for mirror in (1, 2):
        s = surface(big, mirror)
        for p in pts[:100]:
            rp = reflect(big, p, mirror).xyz
            assert residual(s, rp) < 1e-9


def test_batch_matches_scalar(big):
    pts, m1, m2 = synthetic_scene(big, 50, seed=4)
    for p, a, b in zip(pts, m1, m2):
        assert np.allclose(np.asarray(project(big, p, 1)), a, atol=1e-9)
        assert np.allclose(np.asarray(project(big, p, 2)), b, atol=1e-9)


def test_mirror2_images_inside_mirror1_annulus(big):
    # mirror 2 sits behind the reflex hole, so it lands at smaller image radius
    lo1, _ = image_radial_bounds(big, 1)
    _, hi2 = image_radial_bounds(big, 2)
    assert hi2 <= lo1 + 1e-9


def test_project_rejects_bad_input(big):
    with pytest.raises(ValueError):
        project(big, [np.nan, 0, 0], 1)
    with pytest.raises(ValueError):
        project(big, [1000.0, 0, 0], 3)


def test_surface_at_elevation_matches_limits(big):
    for mirror in (1, 2):
        s = surface(big, mirror)
        r, z = surface_at_elevation(s, s.theta_max)
        assert math.atan2(z - s.focus[2], r) == pytest.approx(s.theta_max, abs=1e-12)
        assert residual(s, (r, 0.0, z)) < 1e-9
