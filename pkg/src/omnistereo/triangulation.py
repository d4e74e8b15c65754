"""Omnistereo triangulation and first-order uncertainty propagation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .backprojection import ViewRay, backproject, backproject_points
from .projection import pixel_of_surface_point, surface
from .rig import RigSpec, surface_at_elevation

COPLANAR_TOL = 1e-6  # rad
FD_STEP = 0.05  # px


class TriangulationError(ValueError):
    pass


class InfiniteRangeError(TriangulationError):
    """Rays are parallel in the vertical plane (equal elevations)."""


class DivergentRaysError(TriangulationError):
    """Rays only meet behind the viewpoints."""


class CoplanarityError(TriangulationError):
    pass


class ParallelRaysError(TriangulationError):
    pass


class BehindViewpointError(TriangulationError):
    pass


class InvalidPixelError(TriangulationError):
    pass


@dataclass(frozen=True)
class TriangulatedPoint:
    position: np.ndarray
    covariance: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    method: str = "naive"
    gap: float = 0.0
    m1: Optional[tuple] = None
    m2: Optional[tuple] = None

    @property
    def rho(self) -> float:
        return float(np.hypot(self.position[0], self.position[1]))


def intersect_elevations(spec: RigSpec, theta1: float, theta2: float, psi: float = 0.0) -> np.ndarray:
    """Point where the mirror-1 ray at ``theta1`` meets the mirror-2 ray at ``theta2``.

    Both rays share azimuth ``psi``. Horizontal range is
    ``b cos(t1) cos(t2) / |sin(t1 - t2)|``; the height is measured from F1.
    """
    s = np.sin(theta1 - theta2)
    if abs(s) < 1e-12:
        raise InfiniteRangeError("equal elevations: intersection at infinity")
    if theta2 < theta1:
        raise DivergentRaysError("rays diverge (theta2 < theta1)")
    rho = abs(spec.baseline * np.cos(theta1) * np.cos(theta2) / s)
    return np.array([rho * np.cos(psi), rho * np.sin(psi), spec.c1 + rho * np.tan(theta1)])


def _angle_diff(a, b):
    return abs((a - b + np.pi) % (2 * np.pi) - np.pi)


def triangulate_naive(ray1: ViewRay, ray2: ViewRay, spec: RigSpec) -> TriangulatedPoint:
    if _angle_diff(ray1.psi, ray2.psi) > COPLANAR_TOL:
        raise CoplanarityError("rays do not share an azimuth")
    pos = intersect_elevations(spec, ray1.theta, ray2.theta, ray1.psi)
    return TriangulatedPoint(pos, np.zeros((3, 3)), "naive", 0.0)


def _midpoint_core(f1, f2, v1, v2):
    """Vectorised common-perpendicular midpoint.

    Returns (position, gap, lam1, lam2, parallel_mask).
    """
    cross = np.cross(v1, v2)
    cn = np.linalg.norm(cross, axis=-1)
    scale = np.linalg.norm(v1, axis=-1) * np.linalg.norm(v2, axis=-1)
    parallel = ~(cn > 1e-12 * scale)
    with np.errstate(invalid="ignore", divide="ignore"):
        n_hat = cross / cn[..., None]
    V = np.stack([v1, -v2, n_hat], axis=-1)
    rhs = np.broadcast_to(f2 - f1, v1.shape)
    bad = parallel | ~np.all(np.isfinite(V), axis=(-1, -2))
    V_safe = np.where(bad[..., None, None], np.eye(3), V)
    lam = np.linalg.solve(V_safe, rhs[..., None])[..., 0]
    with np.errstate(invalid="ignore"):
        pos = f1 + lam[..., 0:1] * v1 + 0.5 * lam[..., 2:3] * n_hat
    pos[bad] = np.nan
    lam[bad] = np.nan
    return pos, np.abs(lam[..., 2]), lam[..., 0], lam[..., 1], parallel


def midpoint_points(spec: RigSpec, m1, m2) -> tuple[np.ndarray, np.ndarray]:
    """Batch midpoint triangulation of pixel pairs (..., 2).

    Returns positions (..., 3) and gaps (...); NaN where lifting fails,
    rays are parallel or the solution lies behind a viewpoint.
    """
    _, _, v1 = backproject_points(spec, np.asarray(m1, dtype=float), 1)
    _, _, v2 = backproject_points(spec, np.asarray(m2, dtype=float), 2)
    pos, gap, l1, l2, _ = _midpoint_core(spec.f1, spec.f2, v1, v2)
    behind = ~((l1 > 0) & (l2 > 0))
    pos[behind] = np.nan
    gap = np.where(behind, np.nan, gap)
    return pos, gap


def triangulate_midpoint(spec: RigSpec, m1, m2) -> TriangulatedPoint:
    """Midpoint of the common perpendicular between the two view rays."""
    m1 = np.asarray(m1, dtype=float)
    m2 = np.asarray(m2, dtype=float)
    r1 = backproject(spec, m1, 1)
    r2 = backproject(spec, m2, 2)
    if r1 is None or r2 is None:
        raise InvalidPixelError("pixel does not lift to a valid ray")
    v1 = np.asarray(r1.v)[None]
    v2 = np.asarray(r2.v)[None]
    pos, gap, l1, l2, parallel = _midpoint_core(spec.f1, spec.f2, v1, v2)
    if parallel[0]:
        raise ParallelRaysError("back-projected rays are parallel")
    if not (l1[0] > 0 and l2[0] > 0):
        raise BehindViewpointError("intersection lies behind a viewpoint")
    return TriangulatedPoint(pos[0], np.zeros((3, 3)), "midpoint", float(gap[0]),
                             tuple(m1.tolist()), tuple(m2.tolist()))


def triangulation_jacobian(spec: RigSpec, m1, m2, step: float = FD_STEP) -> np.ndarray:
    """3x4 Jacobian of the midpoint position w.r.t. (u1, v1, u2, v2) by central differences."""
    m12 = np.concatenate([np.asarray(m1, dtype=float), np.asarray(m2, dtype=float)])
    probes = np.repeat(m12[None], 8, axis=0)
    for j in range(4):
        probes[2 * j, j] += step
        probes[2 * j + 1, j] -= step
    pos, _ = midpoint_points(spec, probes[:, :2], probes[:, 2:])
    J = (pos[0::2] - pos[1::2]).T / (2.0 * step)
    return J


def propagate_uncertainty(spec: RigSpec, m1, m2, sigma_px: float = 1.0,
                          step: float = FD_STEP) -> np.ndarray:
    """Covariance J Omega J^T of the midpoint for i.i.d. pixel noise ``sigma_px``."""
    triangulate_midpoint(spec, m1, m2)  # surfaces lifting / geometry errors
    J = triangulation_jacobian(spec, m1, m2, step)
    if not np.all(np.isfinite(J)):
        raise TriangulationError("singular configuration: non-finite Jacobian")
    cov = sigma_px ** 2 * (J @ J.T)
    return 0.5 * (cov + cov.T)


def triangulate_with_covariance(spec: RigSpec, m1, m2, sigma_px: float = 1.0) -> TriangulatedPoint:
    tp = triangulate_midpoint(spec, m1, m2)
    cov = propagate_uncertainty(spec, m1, m2, sigma_px)
    return TriangulatedPoint(tp.position, cov, tp.method, tp.gap, tp.m1, tp.m2)


def infinity_pixels(spec: RigSpec, theta: float, psi: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Pixels where a direction at elevation ``theta`` (from either focus) images."""
    out = []
    for mirror in (1, 2):
        r, z = surface_at_elevation(surface(spec, mirror), theta)
        p = np.array([r * np.cos(psi), r * np.sin(psi), z])
        out.append(pixel_of_surface_point(spec, p, mirror))
    return out[0], out[1]


def sroi_limits(spec: RigSpec) -> tuple[float, float]:
    s1, s2 = surface(spec, 1), surface(spec, 2)
    return max(s1.theta_min, s2.theta_min), min(s1.theta_max, s2.theta_max)


def range_sweep(spec: RigSpec, disparities=range(1, 101), theta: Optional[float] = None,
                psi: float = 0.0) -> np.ndarray:
    """Horizontal range against radial image disparity.

    The mirror-1 pixel is fixed at elevation ``theta`` (default: middle of
    the stereo ROI). The mirror-2 pixel starts where the same direction at
    infinity images and moves toward the image centre by each disparity.
    Returns rows ``(disparity, rho, delta_rho)`` with ``delta_rho`` the drop
    in range to the next disparity (NaN on the last row).
    """
    lo, hi = sroi_limits(spec)
    if theta is None:
        theta = 0.5 * (lo + hi)
    m1, m2_inf = infinity_pixels(spec, theta, psi)
    m_c = np.array([spec.camera.u_c, spec.camera.v_c])
    radial = (m2_inf - m_c) / np.linalg.norm(m2_inf - m_c)
    disp = np.asarray(list(disparities), dtype=float)
    m2 = m2_inf[None] - disp[:, None] * radial[None]
    theta1, _, _ = backproject_points(spec, m1[None], 1)
    theta2, _, _ = backproject_points(spec, m2, 2)
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.abs(spec.baseline * np.cos(theta1) * np.cos(theta2) / np.sin(theta1 - theta2))
    rho[~(theta2 > theta1)] = np.nan
    drho = np.full_like(rho, np.nan)
    drho[:-1] = rho[:-1] - rho[1:]
    return np.column_stack([disp, rho, drho])
