import math

import numpy as np
import pytest
from scipy.ndimage import map_coordinates

from omnistereo.backprojection import backproject_points
from omnistereo.harness import synthetic_scene
from omnistereo.panorama import (PanoramaError, PanoramaLUT, build_lut, disparity_to_match,
                                 lut_to_bytes, match_columns, panorama_geometry, read_image,
                                 read_lut, rectify, write_image, write_lut)
from omnistereo.projection import PixelPoint, image_radial_bounds, project_points, surface
from omnistereo.rig import BIG_RIG


@pytest.fixture(scope="module")
def geom():
    return panorama_geometry(BIG_RIG, w_pan=1280)


@pytest.fixture(scope="module")
def luts(geom):
    return build_lut(BIG_RIG, geom, 1), build_lut(BIG_RIG, geom, 2)


def test_geometry_from_width(big):
    g = panorama_geometry(big, w_pan=1200)
    assert g.h_pan == round(1200 * g.h_cyl / (2 * math.pi))
    assert g.l_px == pytest.approx(2 * math.pi / 1200)
    assert abs(g.h_cyl / g.h_pan - g.l_px) / g.l_px < 1.0 / g.h_pan


def test_geometry_symmetric_45():
    g = panorama_geometry(w_pan=628, theta_limits=(-math.pi / 4, math.pi / 4))
    assert g.h_cyl == pytest.approx(2.0)
    assert g.h_pan == 200


def test_geometry_from_height(big):
    g = panorama_geometry(big, h_pan=400)
    assert g.h_pan == 400
    assert g.w_pan == round(2 * math.pi * 400 / g.h_cyl)


@pytest.mark.parametrize("kw", [{"w_pan": 0}, {"h_pan": -3}, {}, {"w_pan": 10, "h_pan": 10}])
def test_geometry_bad_dims(big, kw):
    with pytest.raises(PanoramaError):
        panorama_geometry(big, **kw)


def test_top_row_and_first_column(geom):
    theta, psi = geom.cell_angles()
    assert theta[0, 0] == pytest.approx(geom.theta_max)
    assert psi[5, 0] == 0.0
    assert np.all(np.diff(theta[:, 0]) < 0)


def test_lut_round_trip(luts, geom):
    theta, psi = geom.cell_angles()
    for lut in luts:
        ok = lut.mask
        m = np.stack([lut.map_u[ok], lut.map_v[ok]], axis=-1)
        th, ps, _ = backproject_points(BIG_RIG, m, lut.mirror)
        assert np.max(np.abs(th - theta[ok])) < 1e-6
        dpsi = np.abs((ps - psi[ok] + np.pi) % (2 * np.pi) - np.pi)
        assert np.max(dpsi) < 1e-6


def test_lut_sources_inside_annulus(luts, big):
    for lut in luts:
        lo, hi = image_radial_bounds(big, lut.mirror)
        r = np.hypot(lut.map_u - big.camera.u_c, lut.map_v - big.camera.v_c)[lut.mask]
        assert r.min() >= lo - 1e-6 and r.max() <= hi + 1e-6


def test_lut_bytes_deterministic(big, geom, luts):
    again = build_lut(big, geom, 1)
    assert lut_to_bytes(again) == lut_to_bytes(luts[0])


def test_lut_file_round_trip(tmp_path, luts):
    p = tmp_path / "m1.lut"
    write_lut(p, luts[0])
    back = read_lut(p)
    assert back.mirror == 1 and back.geometry.w_pan == luts[0].geometry.w_pan
    assert np.array_equal(back.mask, luts[0].mask)
    assert np.allclose(back.map_u[back.mask], luts[0].map_u[back.mask], atol=1e-3)
    assert p.read_bytes()[:6] == b"OSLUT1"


def test_bad_lut_file(tmp_path):
    p = tmp_path / "junk.lut"
    p.write_bytes(b"NOTALUT" + bytes(64))
    with pytest.raises(PanoramaError):
        read_lut(p)


def test_same_column_alignment(big, geom):
    pts, m1, m2 = synthetic_scene(big, 500, seed=8)
    t1, p1, _ = backproject_points(big, m1, 1)
    t2, p2, _ = backproject_points(big, m2, 2)
    u1, v1 = geom.cell_of(t1, p1)
    u2, v2 = geom.cell_of(t2, p2)
    du = np.abs((u1 - u2 + geom.w_pan / 2) % geom.w_pan - geom.w_pan / 2)
    assert du.max() <= 0.5
    # mirror 2's viewpoint is lower, so the same point sits higher in its panorama
    assert np.all(v2 < v1)


def test_rectify_constant(luts, big):
    img = np.full((big.camera.height, big.camera.width), 77.0)
    pan = rectify(img, luts[0])
    assert np.all(pan[luts[0].mask] == pytest.approx(77.0))
    assert np.all(pan[~luts[0].mask] == 0.0)


def test_rectify_all_masked(luts, big):
    lut = luts[0]
    nan = np.full_like(lut.map_u, np.nan)
    empty = PanoramaLUT(1, lut.geometry, nan, nan, lut.spec_hash, lut.source_shape)
    img = np.full((big.camera.height, big.camera.width, 3), 9.0)
    assert np.all(rectify(img, empty, fill=-1) == -1)


def test_rectify_dimension_mismatch(luts):
    with pytest.raises(PanoramaError):
        rectify(np.zeros((10, 10)), luts[0])


def test_rectify_marker(big, geom, luts):
    p = np.array([700.0, 300.0, 80.0])
    lut = luts[0]
    m = project_points(big, p, 1)
    img = np.zeros((big.camera.height, big.camera.width))
    u, v = np.rint(m).astype(int)
    img[v - 1:v + 2, u - 1:u + 2] = 255.0
    pan = rectify(img, lut, method="nearest")
    th, ps, _ = backproject_points(big, m[None], 1)
    cu, cv = geom.cell_of(th[0], ps[0])
    hot = np.argwhere(pan > 0)
    centre = hot.mean(axis=0)
    assert abs(centre[0] - cv) < 1.5 and abs(centre[1] - cu) < 1.5


def test_nearest_equals_bilinear_on_integer_sources(luts, big, rng):
    lut = luts[0]
    mu = np.where(lut.mask, np.rint(lut.map_u), np.nan)
    mv = np.where(lut.mask, np.rint(lut.map_v), np.nan)
    snapped = PanoramaLUT(1, lut.geometry, mu, mv, lut.spec_hash, lut.source_shape)
    img = rng.random((big.camera.height, big.camera.width))
    assert np.allclose(rectify(img, snapped), rectify(img, snapped, method="nearest"))


def test_image_io_round_trip(tmp_path, rng):
    rgb = (rng.random((20, 30, 3)) * 255).astype(np.uint8)
    gray = rgb[..., 0]
    write_image(tmp_path / "a.ppm", rgb)
    write_image(tmp_path / "b.pgm", gray)
    assert np.array_equal(read_image(tmp_path / "a.ppm"), rgb)
    assert np.array_equal(read_image(tmp_path / "b.pgm"), gray)


def test_disparity_to_match():
    # disparity is v1 - v2: mirror 2's cell sits above the reference cell
    m2 = disparity_to_match(PixelPoint(100, 50, "Xi1"), 10)
    assert (m2.u, m2.v, m2.frame) == (100, 40, "Xi2")
    with pytest.raises(PanoramaError):
        disparity_to_match(PixelPoint(100, 50, "Xi1"), 0)
    with pytest.raises(PanoramaError):
        disparity_to_match(PixelPoint(100, 5, "Xi1"), 10)
    with pytest.raises(PanoramaError):
        disparity_to_match(PixelPoint(100, 50, "Xi1"), 10, h_pan=30)


def test_match_synthetic_shift(rng):
    base = rng.random((120, 60))
    pan1 = base[10:110]
    pan2 = base[17:117]  # content moved up 7 rows
    disp = match_columns(pan1, pan2, window=5, max_disparity=16)
    valid = np.isfinite(disp)
    assert valid.sum() > 0.5 * disp.size
    # parabolic refinement of an exact peak is pulled by uneven neighbours
    assert np.median(disp[valid]) == pytest.approx(7.0, abs=1e-9)
    assert np.all(np.abs(disp[valid] - 7.0) < 0.25)


def test_match_textureless():
    pan = np.full((50, 40), 3.0)
    assert np.all(np.isnan(match_columns(pan, pan)))


def test_match_window_too_big():
    with pytest.raises(PanoramaError):
        match_columns(np.zeros((4, 4)), np.zeros((4, 4)), window=9)


def test_match_scene_pair(big, geom):
    # textured cylinder wall at 1.2 m rendered into both panoramas
    rho = 1200.0
    rng = np.random.default_rng(3)
    noise = rng.random((200, 300))

    def texture(z, psi):
        # ~20 mm texture cells: a few panorama pixels each, so nothing aliases
        zi = (z + 1000.0) / 20.0
        pi = psi / (2 * np.pi) * 300.0
        return map_coordinates(noise, [zi.ravel(), pi.ravel()], order=3, mode="wrap").reshape(z.shape)

    theta, psi = geom.cell_angles()
    pans, zs = [], []
    for f in (big.f1, big.f2):
        z = f[2] + rho * np.tan(theta)
        zs.append(z)
        pans.append(texture(z, psi))
    disp = match_columns(pans[0], pans[1], window=7, max_disparity=64)
    # analytic disparity: the mirror-1 cell's wall point seen from F2
    th2 = np.arctan((zs[0] - big.f2[2]) / rho)
    _, v2 = geom.cell_of(th2, psi)
    truth = np.arange(geom.h_pan)[:, None] - v2
    ok = np.isfinite(disp)
    assert ok.sum() > 0.3 * disp.size
    assert np.median(np.abs(disp[ok] - truth[ok])) < 0.5
