"""Lifting image pixels to view rays anchored at each mirror's primary focus."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .projection import PixelPoint, ReflectionPoint, surface
from .rig import RigSpec

TWO_PI = 2.0 * np.pi


class GrazingRayError(ValueError):
    """Lifted ray is (nearly) parallel to the hyperboloid asymptote."""


@dataclass(frozen=True)
class ViewRay:
    mirror: int
    theta: float
    psi: float
    anchor: tuple
    v: tuple

    @property
    def direction(self) -> np.ndarray:
        v = np.asarray(self.v, dtype=float)
        return v / np.linalg.norm(v)

    @property
    def origin(self) -> np.ndarray:
        return np.asarray(self.anchor, dtype=float)


def lift_pixel(spec: RigSpec, m, mirror: int = 1) -> np.ndarray:
    """Normalised projection point for pixel ``m`` (array (..., 2) or PixelPoint).

    Mirror 1 gives ``K^-1 m`` with unit z; mirror 2 gives the same point
    carried through the reflex plane into the camera frame (z = d - 1).
    """
    m = np.asarray(m, dtype=float)
    K_inv = spec.camera.K_inv
    q = np.stack([m[..., 0], m[..., 1], np.ones_like(m[..., 0])], axis=-1) @ K_inv.T
    if mirror == 2:
        q[..., 2] = spec.d - q[..., 2]
    return q


def _intersect(spec: RigSpec, m, mirror: int):
    """Reflection points for pixels ``m`` (..., 2); NaN where the ray misses."""
    s = surface(spec, mirror)
    q = lift_pixel(spec, m, 1)  # frame-C' coordinates, z = 1
    qn = np.linalg.norm(q, axis=-1)
    denom = s.k - qn * np.sqrt(s.k * (s.k - 2.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(denom > 1e-12, s.c / denom, np.nan)
    if mirror == 1:
        p = t[..., None] * q
    else:
        p = np.stack([t * q[..., 0], t * q[..., 1], spec.d - t], axis=-1)
    return p, denom


def mirror_intersection(spec: RigSpec, q, mirror: int) -> ReflectionPoint:
    """Reflection point hit by the lifted point ``q`` (from lift_pixel)."""
    q = np.asarray(q, dtype=float)
    s = surface(spec, mirror)
    if mirror == 1:
        qn = np.linalg.norm(q)
        denom = s.k - qn * np.sqrt(s.k * (s.k - 2.0))
        if denom < 1e-12:
            raise GrazingRayError("ray grazes or misses mirror 1")
        t = s.c / denom
        p = t * q
    else:
        f2v = spec.f2v
        dvec = q - f2v
        qn = np.linalg.norm(dvec)
        denom = s.k - qn * np.sqrt(s.k * (s.k - 2.0))
        if denom < 1e-12:
            raise GrazingRayError("ray grazes or misses mirror 2")
        t = s.c / denom
        p = f2v + t * dvec
    return ReflectionPoint(float(p[0]), float(p[1]), float(p[2]), mirror)


def backproject_points(spec: RigSpec, m, mirror: int):
    """Vectorised lifting.

    Returns ``(theta, psi, v)`` where ``v`` is the (..., 3) vector from the
    focus to the reflection point. Out-of-band pixels give NaN.
    """
    s = surface(spec, mirror)
    p, _ = _intersect(spec, m, mirror)
    r = np.hypot(p[..., 0], p[..., 1])
    tol = 1e-9 * s.r_max
    ok = (r >= s.r_min - tol) & (r <= s.r_max + tol)
    v = p - np.asarray(s.focus)
    v[~ok] = np.nan
    with np.errstate(invalid="ignore"):
        theta = np.arcsin(v[..., 2] / np.linalg.norm(v, axis=-1))
        psi = np.mod(np.arctan2(v[..., 1], v[..., 0]), TWO_PI)
    return theta, psi, v


def backproject(spec: RigSpec, m, mirror: int) -> Optional[ViewRay]:
    """View ray of pixel ``m`` via ``mirror``; None outside that mirror's annulus."""
    m = np.asarray(m, dtype=float)
    theta, psi, v = backproject_points(spec, m[None, :], mirror)
    if np.isnan(theta[0]):
        return None
    psi0 = float(psi[0])
    if psi0 >= TWO_PI:
        psi0 = 0.0
    return ViewRay(mirror, float(theta[0]), psi0, tuple(surface(spec, mirror).focus), tuple(v[0]))


def which_mirror(spec: RigSpec, m) -> Optional[int]:
    """Mirror whose imaged annulus contains pixel ``m`` (None in the dead zones)."""
    for mirror in (1, 2):
        if backproject(spec, m, mirror) is not None:
            return mirror
    return None
