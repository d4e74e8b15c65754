import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from omnistereo.rig import (BIG_RIG, ConfigParseError, RigError, RigSpec, derive_surfaces,
                            dump_spec, f_r, f_z, load_spec, reflex_radius, semi_axes)


def test_baseline_design_values(big, small):
    assert big.baseline == pytest.approx(131.61, abs=1e-9)
    assert small.baseline == pytest.approx(108.93, abs=1e-9)


def test_semi_axes_satisfy_focal_relation():
    a, b = semi_axes(123.49, 5.73)
    # foci separation c: a^2 + b^2 = (c/2)^2
    assert a * a + b * b == pytest.approx((123.49 / 2) ** 2, rel=1e-12)


def test_reflex_radius(big, small):
    assert reflex_radius(big) == pytest.approx(17.23, abs=0.01)
    assert reflex_radius(small) == pytest.approx(11.74, abs=0.05)


def test_elevation_limits_big(big):
    s1, s2 = derive_surfaces(big)
    assert math.degrees(s1.theta_max) == pytest.approx(14.0, abs=0.5)
    assert math.degrees(s2.theta_min) == pytest.approx(-14.0, abs=0.5)
    assert s1.r_max == s2.r_max == big.r_sys


def test_f_z_rim_and_bounds(big):
    s1, _ = derive_surfaces(big)
    assert f_z(s1, 37.0) == pytest.approx(132.7, abs=0.05)
    z = f_z(s1, s1.r_min)
    assert z is not None and z >= s1.z0 + s1.a
    assert f_z(s1, s1.r_max + 1.0) is None


def test_f_r_reflex_plane_and_vertex(big):
    s1, _ = derive_surfaces(big)
    assert f_r(s1, big.d / 2) == pytest.approx(17.23, abs=0.01)
    # the vertex lies inside the reflex cut, so only the unbounded sheet reaches it
    assert f_r(s1, s1.z0 + s1.a) is None
    # sqrt amplifies the rounding of (z - z0)^2 / a^2 - 1 near zero
    assert f_r(s1, s1.z0 + s1.a, bounded=False) == pytest.approx(0.0, abs=1e-6)
    assert f_r(s1, s1.z0 + 0.5 * s1.a, bounded=False) is None


def test_f_r_f_z_round_trip_at_25mm(big):
    s1, s2 = derive_surfaces(big)
    for s in (s1, s2):
        assert abs(f_r(s, f_z(s, 25.0)) - 25.0) < 1e-12


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 1.0))
def test_profile_residual_and_inverse(t):
    for s in derive_surfaces(BIG_RIG):
        r = s.r_min + t * (s.r_max - s.r_min)
        z = f_z(s, r)
        assert abs((z - s.z0) ** 2 / s.a ** 2 - r ** 2 / s.b ** 2 - 1.0) < 1e-10
        assert f_r(s, z) == pytest.approx(r, rel=1e-10, abs=1e-10)


def test_theta_max_self_consistent(big):
    s1, _ = derive_surfaces(big)
    z = f_z(s1, big.r_sys)
    v = np.array([big.r_sys, 0.0, z - big.c1])
    assert s1.theta_max == pytest.approx(math.asin(v[2] / np.linalg.norm(v)), abs=1e-12)


def test_k_must_exceed_two():
    with pytest.raises(RigError, match="k1 must exceed 2"):
        RigSpec(c1=123.49, c2=241.8, k1=2.0, k2=9.74, d=233.68, r_sys=37.0)


def test_config_round_trip(tmp_path, big):
    p = tmp_path / "big.rig"
    p.write_text(dump_spec(big))
    assert load_spec(p) == big


def test_config_bad_k(tmp_path, big):
    p = tmp_path / "bad.rig"
    p.write_text(dump_spec(big).replace("k1 = 5.73", "k1 = 1.5"))
    with pytest.raises(RigError, match="k1 must exceed 2"):
        load_spec(p)


def test_config_missing_key(tmp_path, big):
    p = tmp_path / "bad.rig"
    lines = [ln for ln in dump_spec(big).splitlines() if not ln.startswith("r_sys_mm")]
    p.write_text("\n".join(lines))
    with pytest.raises(ConfigParseError):
        load_spec(p)


def test_shipped_configs_match_presets(big, small):
    assert load_spec("configs/big.rig") == big
    assert load_spec("configs/small.rig") == small


def test_spec_hash_stable_and_sensitive(big):
    assert big.spec_hash() == RigSpec(**{**big.__dict__}).spec_hash()
    assert big.spec_hash() != big.with_theta(big.theta + [0, 0, 0, 0, 0, 1]).spec_hash()
