"""Forward projection of world points to image pixels through either mirror."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from . import _kernels
from .rig import MirrorSurface, RigSpec, derive_surfaces, semi_axes


class DegenerateRayError(ValueError):
    pass


class ExternalPositionError(ValueError):
    """World point lies inside the mirror volume."""


class MirrorBoundsError(ValueError):
    """Reflection point falls outside the physical mirror."""


FRAMES = ("I", "I1", "I2", "Xi1", "Xi2")


@dataclass(frozen=True)
class PixelPoint:
    u: float
    v: float
    frame: str = "I"

    def __post_init__(self):
        if self.frame not in FRAMES:
            raise ValueError(f"unknown frame {self.frame!r}")

    def __array__(self, dtype=None, copy=None):
        return np.array([self.u, self.v], dtype=dtype)


@dataclass(frozen=True)
class ReflectionPoint:
    x: float
    y: float
    z: float
    mirror: int

    @property
    def xyz(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


@lru_cache(maxsize=64)
def surfaces(spec: RigSpec) -> tuple[MirrorSurface, MirrorSurface]:
    """Cached derive_surfaces; RigSpec is frozen and hashable."""
    return derive_surfaces(spec)


def surface(spec: RigSpec, mirror: int) -> MirrorSurface:
    _check_mirror(mirror)
    return surfaces(spec)[mirror - 1]


def _check_mirror(mirror):
    if mirror not in (1, 2):
        raise ValueError(f"mirror index must be 1 or 2, got {mirror!r}")


def lambda1(spec: RigSpec, p_w) -> float:
    """Line parameter from F1 toward ``p_w`` at which the ray meets mirror 1."""
    x, y, z = np.asarray(p_w, dtype=float)
    k = spec.k1
    norm = np.sqrt(x * x + y * y + (z - spec.c1) ** 2)
    denom = norm * np.sqrt(k * (k - 2.0)) - k * (z - spec.c1)
    if abs(denom) < 1e-12:
        raise DegenerateRayError("degenerate ray through F1")
    return float(spec.c1 / denom)


def lambda2(spec: RigSpec, p_w) -> float:
    x, y, z = np.asarray(p_w, dtype=float)
    k = spec.k2
    dz = z - (spec.d - spec.c2)
    norm = np.sqrt(x * x + y * y + dz * dz)
    denom = norm * np.sqrt(k * (k - 2.0)) + k * dz
    if abs(denom) < 1e-12:
        raise DegenerateRayError("degenerate ray through F2")
    return float(spec.c2 / denom)


def _external(spec: RigSpec, p_w, mirror: int) -> bool:
    s = surface(spec, mirror)
    x, y, z = p_w
    rho = np.hypot(x, y)
    if s.sign * (z - s.z0) < s.a:
        return True
    r = s.b * np.sqrt((z - s.z0) ** 2 / s.a ** 2 - 1.0)
    if not (s.r_min <= r <= s.r_max):
        return True
    return r < rho


def reflect(spec: RigSpec, p_w, mirror: int) -> ReflectionPoint:
    """Reflection point of ``p_w`` on the given mirror.

    Raises ExternalPositionError for points inside the mirror volume and
    MirrorBoundsError when the reflection misses the physical surface.
    """
    _check_mirror(mirror)
    p_w = np.asarray(p_w, dtype=float)
    if not np.all(np.isfinite(p_w)):
        raise ValueError("non-finite world point")
    lam = lambda1(spec, p_w) if mirror == 1 else lambda2(spec, p_w)
    if not _external(spec, p_w, mirror) or lam >= 1.0:
        raise ExternalPositionError("point lies inside the mirror volume")
    focus = spec.focus(mirror)
    p = focus + lam * (p_w - focus)
    s = surface(spec, mirror)
    r = np.hypot(p[0], p[1])
    tol = 1e-9 * s.r_max
    if lam <= 0 or not (s.r_min - tol <= r <= s.r_max + tol):
        raise MirrorBoundsError(f"reflection point outside mirror {mirror} limits")
    return ReflectionPoint(float(p[0]), float(p[1]), float(p[2]), mirror)


def reflect_m1(spec: RigSpec, p_w) -> ReflectionPoint:
    return reflect(spec, p_w, 1)


def reflect_m2(spec: RigSpec, p_w) -> ReflectionPoint:
    return reflect(spec, p_w, 2)


def reflex_transform(spec: RigSpec, p):
    """Mirror a point through the reflex plane z = d/2 (an involution)."""
    p = np.array(p, dtype=float, copy=True)
    p[..., 2] = spec.d - p[..., 2]
    return p


@lru_cache(maxsize=64)
def _kernel_params(spec: RigSpec, mirror: int) -> np.ndarray:
    s = surface(spec, mirror)
    cam = spec.camera
    return np.array([
        s.c, s.k, float(s.sign), s.focus[2], s.r_min, s.r_max, s.z0, s.a, s.b,
        spec.d, cam.f_u, cam.f_v, cam.s, cam.u_c, cam.v_c, 1.0 if mirror == 2 else 0.0,
    ])


def project_points(spec: RigSpec, points, mirror: int) -> np.ndarray:
    """Batch projection; ``points`` is (..., 3), result (..., 2) with NaN for invalid."""
    _check_mirror(mirror)
    pts = np.asarray(points, dtype=float)
    flat = np.ascontiguousarray(pts.reshape(-1, 3))
    out = _kernels.project_mirror(flat, _kernel_params(spec, mirror))
    return out.reshape(pts.shape[:-1] + (2,))


def project(spec: RigSpec, p_w, mirror: int) -> Optional[PixelPoint]:
    """Pixel of ``p_w`` imaged via ``mirror``, or None when not imaged."""
    p = np.asarray(p_w, dtype=float)
    if p.shape != (3,):
        raise ValueError("project expects a single 3-vector; use project_points for batches")
    if not np.all(np.isfinite(p)):
        raise ValueError("non-finite world point")
    u, v = project_points(spec, p[None, :], mirror)[0]
    if np.isnan(u):
        return None
    return PixelPoint(float(u), float(v), "I")


def pixel_of_surface_point(spec: RigSpec, p, mirror: int) -> np.ndarray:
    """Image pixel of a point that already lies on a mirror surface."""
    p = np.asarray(p, dtype=float)
    cam = spec.camera
    depth = p[..., 2] if mirror == 1 else spec.d - p[..., 2]
    qx, qy = p[..., 0] / depth, p[..., 1] / depth
    return np.stack([cam.f_u * qx + cam.s * qy + cam.u_c, cam.f_v * qy + cam.v_c], axis=-1)


def image_radial_bounds(spec: RigSpec, mirror: int) -> tuple[float, float]:
    """Pixel radii (from the principal point) of the mirror's two rims.

    Rims are imaged along azimuth 0, so for f_u != f_v this is the radius
    measured along the image u-axis.
    """
    s = surface(spec, mirror)
    m_c = np.array([spec.camera.u_c, spec.camera.v_c])
    radii = []
    for r in (s.r_min, s.r_max):
        z = s.z0 + s.sign * s.a / s.b * np.sqrt(s.b ** 2 + r ** 2)
        m = pixel_of_surface_point(spec, np.array([r, 0.0, z]), mirror)
        radii.append(float(np.linalg.norm(m - m_c)))
    return min(radii), max(radii)


def pixel_radius(spec: RigSpec, m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return np.hypot(m[..., 0] - spec.camera.u_c, m[..., 1] - spec.camera.v_c)
