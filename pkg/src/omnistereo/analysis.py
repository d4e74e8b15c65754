"""Field of view, stereo region of interest, spatial resolution and rig size/mass."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import simpson
from scipy.optimize import brentq

from .projection import pixel_of_surface_point, surface
from .rig import MirrorSurface, RigError, RigSpec, reflex_radius, semi_axes, surface_at_elevation
from .triangulation import (InfiniteRangeError, TriangulationError, backproject_points,
                            infinity_pixels, intersect_elevations)

# planar apex angle of a cone subtending one steradian: 2 acos(1 - 1/(2 pi))
THETA_ONE_SR = 2.0 * math.acos(1.0 - 1.0 / (2.0 * math.pi))


class EmptyRoiError(ValueError):
    pass


class ElevationOutOfRange(ValueError):
    pass


@dataclass(frozen=True)
class FovReport:
    theta1_min: float
    theta1_max: float
    theta2_min: float
    theta2_max: float
    theta2_max_unclipped: float
    alpha1: float
    alpha2: float
    alpha_sys: float
    alpha_sys_unclipped: float
    theta_sroi_min: float
    theta_sroi_max: float
    alpha_sroi: float
    alpha_cam_min: float
    alpha_cam_max: float

    @property
    def camera_feasible(self) -> bool:
        return self.alpha_cam_min <= self.alpha_cam_max

    def as_degrees(self) -> dict:
        return {k: math.degrees(v) for k, v in self.__dict__.items()}


def _rim_z(s: MirrorSurface, r: float) -> float:
    return s.z0 + s.sign * s.a / s.b * math.sqrt(s.b ** 2 + r ** 2)


def fov_report(spec: RigSpec) -> FovReport:
    s1, s2 = surface(spec, 1), surface(spec, 2)
    # Without the camera hole, mirror 2's view upward is cut by the outer rim of mirror 1.
    z_top = _rim_z(s1, spec.r_sys)
    th2_unclipped = math.atan2(z_top - s2.focus[2], spec.r_sys)
    lo = max(s1.theta_min, s2.theta_min)
    hi = min(s1.theta_max, s2.theta_max)
    return FovReport(
        theta1_min=s1.theta_min, theta1_max=s1.theta_max,
        theta2_min=s2.theta_min, theta2_max=s2.theta_max,
        theta2_max_unclipped=th2_unclipped,
        alpha1=s1.theta_max - s1.theta_min,
        alpha2=s2.theta_max - s2.theta_min,
        alpha_sys=max(s1.theta_max, s2.theta_max) - min(s1.theta_min, s2.theta_min),
        alpha_sys_unclipped=max(s1.theta_max, th2_unclipped) - min(s1.theta_min, s2.theta_min),
        theta_sroi_min=lo, theta_sroi_max=hi, alpha_sroi=hi - lo,
        alpha_cam_min=2.0 * math.atan(spec.r_sys / z_top),
        alpha_cam_max=2.0 * math.atan(spec.r_cam / _rim_z(s2, spec.r_cam)),
    )


def system_elevation_limits(spec: RigSpec) -> tuple[float, float]:
    """(theta_sys_min, theta_sys_max) using the camera-hole-limited mirror 2."""
    s1, s2 = surface(spec, 1), surface(spec, 2)
    return min(s1.theta_min, s2.theta_min), max(s1.theta_max, s2.theta_max)


@dataclass(frozen=True)
class StereoRoi:
    p_high: tuple
    p_mid: tuple
    p_low: tuple
    far_bound: list = field(default_factory=list)


def _rho_z(p) -> tuple:
    return (float(math.hypot(p[0], p[1])), float(p[2]))


def far_bound(spec: RigSpec, disparity_px: float = 1.0, psi: float = 0.0) -> list:
    """Triangulated (rho, z) at ``disparity_px`` for every 1-px radius step of mirror 1's ROI band."""
    rep = fov_report(spec)
    m_c = np.array([spec.camera.u_c, spec.camera.v_c])
    r_lo = np.linalg.norm(infinity_pixels(spec, rep.theta_sroi_min, psi)[0] - m_c)
    r_hi = np.linalg.norm(infinity_pixels(spec, rep.theta_sroi_max, psi)[0] - m_c)
    radii = np.arange(math.ceil(min(r_lo, r_hi)), math.floor(max(r_lo, r_hi)) + 1, 1.0)
    direction = np.array([math.cos(psi), math.sin(psi)])
    m1 = m_c[None] + radii[:, None] * direction[None]
    theta1, _, _ = backproject_points(spec, m1, 1)
    out = []
    for th in theta1:
        if not np.isfinite(th):
            continue
        _, m2_inf = infinity_pixels(spec, th, psi)
        radial = (m2_inf - m_c) / np.linalg.norm(m2_inf - m_c)
        m2 = m2_inf - disparity_px * radial
        th2, _, _ = backproject_points(spec, m2[None], 2)
        if not np.isfinite(th2[0]):
            continue
        try:
            p = intersect_elevations(spec, float(th), float(th2[0]), psi)
        except TriangulationError:
            continue
        out.append(_rho_z(p))
    return out


def stereo_roi(spec: RigSpec, with_far_bound: bool = True) -> StereoRoi:
    rep = fov_report(spec)
    if rep.alpha_sroi <= 0:
        raise EmptyRoiError("mirror fields of view do not overlap")
    try:
        p_high = intersect_elevations(spec, rep.theta1_max, rep.theta2_max)
        p_mid = intersect_elevations(spec, rep.theta1_min, rep.theta2_max)
        p_low = intersect_elevations(spec, rep.theta1_min, rep.theta2_min)
    except TriangulationError as exc:
        raise EmptyRoiError(f"degenerate stereo ROI: {exc}") from exc
    fb = far_bound(spec) if with_far_bound else []
    return StereoRoi(_rho_z(p_high), _rho_z(p_mid), _rho_z(p_low), fb)


def resolution_at_point(spec: RigSpec, mirror: int, r, z, f: float | None = None):
    """Catadioptric spatial resolution (image area per solid angle) at surface point (r, z).

    ``f`` defaults to the camera's mean focal length in pixels, giving px^2/sr.
    """
    f = spec.camera.f if f is None else f
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float)
    if mirror == 1:
        depth = z
        ratio = (r ** 2 + (spec.c1 - z) ** 2) / (r ** 2 + z ** 2)
    else:
        depth = spec.d - z
        ratio = (r ** 2 + (spec.c2 - spec.d + z) ** 2) / (r ** 2 + depth ** 2)
    eta_cam = f ** 2 * (np.sqrt(r ** 2 + depth ** 2) / depth) ** 3
    return ratio * eta_cam, eta_cam


def eta_to_2d(eta):
    return 2.0 * np.sqrt(np.asarray(eta) / np.pi) / THETA_ONE_SR


def spatial_resolution(spec: RigSpec, mirror: int, theta: float, f: float | None = None):
    """(eta, eta_2d) for the mirror point seen at elevation ``theta``."""
    s = surface(spec, mirror)
    tol = 1e-9
    if not (s.theta_min - tol <= theta <= s.theta_max + tol):
        raise ElevationOutOfRange(
            f"elevation {math.degrees(theta):.3f} deg outside mirror {mirror} field of view")
    r, z = surface_at_elevation(s, theta)
    eta, _ = resolution_at_point(spec, mirror, r, z, f)
    return float(eta), float(eta_to_2d(eta))


def resolution_curve(spec: RigSpec, mirror: int, n: int = 64) -> np.ndarray:
    """Rows (theta, eta, eta_2d) sampled evenly over the mirror's elevations."""
    s = surface(spec, mirror)
    th = np.linspace(s.theta_min, s.theta_max, n)
    r, z = surface_at_elevation(s, th)
    eta, _ = resolution_at_point(spec, mirror, r, z)
    return np.column_stack([th, eta, eta_to_2d(eta)])


@dataclass(frozen=True)
class SizeMass:
    h_sys: float
    m_sys: float
    volumes: dict
    masses: dict


def _ring_area(r, tau):
    return np.pi * tau * (2.0 * r - tau)


def shell_volume(s: MirrorSurface, tau: float, intervals: int = 2048) -> float:
    """Ring-method volume of a mirror shell of horizontal wall thickness ``tau`` (mm^3)."""
    if intervals % 2:
        intervals += 1
    za, zb = sorted((_rim_z(s, s.r_min), _rim_z(s, s.r_max)))
    z = np.linspace(za, zb, intervals + 1)
    r = s.b * np.sqrt(np.maximum((z - s.z0) ** 2 / s.a ** 2 - 1.0, 0.0))
    return float(simpson(_ring_area(r, tau), x=z))


def size_mass(spec: RigSpec, intervals: int = 2048) -> SizeMass:
    s1, s2 = surface(spec, 1), surface(spec, 2)
    h_sys = _rim_z(s1, spec.r_sys) - _rim_z(s2, spec.r_sys)
    r_ref = s1.r_min
    v1 = shell_volume(s1, spec.tau_m, intervals)
    v2 = shell_volume(s2, spec.tau_m, intervals)
    v_ref = spec.tau_m * math.pi * r_ref ** 2
    # support tube hugging the mirrors' outer radius
    r_out = spec.r_sys + spec.tube_wall
    v_tub = math.pi * (r_out ** 2 - spec.r_sys ** 2) * h_sys
    g_per_mm3 = 1e-3  # g/cm^3 -> g/mm^3
    m_mir = (v1 + v2 + v_ref) * spec.rho_mir * g_per_mm3
    m_tub = v_tub * spec.rho_tub * g_per_mm3
    return SizeMass(
        h_sys=h_sys,
        m_sys=spec.m_cam + m_tub + m_mir,
        volumes={"mirror1": v1, "mirror2": v2, "reflex": v_ref, "tube": v_tub},
        masses={"camera": spec.m_cam, "tube": m_tub, "mirrors": m_mir},
    )


def imaging_ratio(spec: RigSpec) -> float:
    """Ratio of the radial pixel heights of the stereo ROI band on mirror 1 vs mirror 2."""
    rep = fov_report(spec)
    m_c = np.array([spec.camera.u_c, spec.camera.v_c])
    heights = []
    for idx in (0, 1):
        lo = infinity_pixels(spec, rep.theta_sroi_min)[idx]
        hi = infinity_pixels(spec, rep.theta_sroi_max)[idx]
        heights.append(abs(np.linalg.norm(hi - m_c) - np.linalg.norm(lo - m_c)))
    return heights[0] / heights[1]


# ---------------------------------------------------------------------------
# design sweeps
# ---------------------------------------------------------------------------

def alpha1_for_k(spec: RigSpec, k1: float) -> float:
    """Mirror-1 vFOV with k1 replaced and every other parameter held; 0 once the
    reflex rim reaches r_sys."""
    c1 = spec.c1
    a, b = semi_axes(c1, k1)
    dz = 0.5 * spec.d - 0.5 * c1
    if dz <= a:
        return 0.0
    r_ref = b * math.sqrt(dz ** 2 / a ** 2 - 1.0)
    if r_ref >= spec.r_sys:
        return 0.0
    z_top = 0.5 * c1 + a / b * math.sqrt(b * b + spec.r_sys ** 2)
    th_max = math.atan2(z_top - c1, spec.r_sys)
    th_min = math.atan2(0.5 * spec.d - c1, r_ref)
    return th_max - th_min


def rsys_for_alpha1(c1: float, k1: float, d: float, alpha1: float) -> float:
    """System radius giving mirror 1 the vFOV ``alpha1`` (reflex at d/2 fixed)."""
    spec_like = RigSpec(c1=c1, c2=1.0, k1=k1, k2=3.0, d=d, r_sys=1.0, r_cam=0.5)
    r_ref = reflex_radius(spec_like)
    th_min = math.atan2(0.5 * d - c1, r_ref)
    a, b = semi_axes(c1, k1)
    s = MirrorSurface(1, c1, k1, a, b, 0.5 * c1, 0.0, np.inf, -np.pi, np.pi, (0.0, 0.0, c1))
    r, _ = surface_at_elevation(s, th_min + alpha1)
    return float(r)


def c1_for_k1(spec: RigSpec, k1: float) -> float:
    """Focal separation of mirror 1 that keeps its rim at the same spot in the camera view.

    The rim radius r_sys and the camera half-angle atan(r_sys / z_max) are
    held at their values in ``spec``; c1 is solved so the k1 profile passes
    through that rim point.
    """
    s1 = surface(spec, 1)
    z_max = _rim_z(s1, spec.r_sys)
    r = spec.r_sys

    def resid(c):
        a, b = semi_axes(c, k1)
        return 0.5 * c + a / b * math.sqrt(b * b + r * r) - z_max

    return brentq(resid, 1e-6, 2.0 * z_max + 1.0, xtol=1e-12)


def baseline_vs_k1(spec: RigSpec, k1_values) -> np.ndarray:
    """Rows (k1, c1, baseline) with k2, c2 and d held fixed."""
    rows = []
    for k1 in k1_values:
        c1 = c1_for_k1(spec, float(k1))
        rows.append((float(k1), c1, c1 + spec.c2 - spec.d))
    return np.array(rows)


def analysis_report(spec: RigSpec, n_resolution: int = 64) -> dict:
    """Everything the ``analyze`` command emits, as plain JSON-able values."""
    rep = fov_report(spec)
    roi = stereo_roi(spec)
    sm = size_mass(spec)
    s1 = surface(spec, 1)
    return {
        "spec_hash": spec.spec_hash(),
        "baseline_mm": spec.baseline,
        "r_ref_mm": s1.r_min,
        "fov_deg": rep.as_degrees(),
        "camera_fov_feasible": rep.camera_feasible,
        "imaging_ratio": imaging_ratio(spec),
        "stereo_roi": {
            "p_high": list(roi.p_high), "p_mid": list(roi.p_mid), "p_low": list(roi.p_low),
            "far_bound": [list(p) for p in roi.far_bound],
        },
        "h_sys_mm": sm.h_sys,
        "m_sys_g": sm.m_sys,
        "volumes_mm3": sm.volumes,
        "masses_g": sm.masses,
        "resolution": {
            f"mirror{i}": resolution_curve(spec, i, n_resolution).tolist() for i in (1, 2)
        },
    }
