"""Rig parameters, hyperboloid mirror surfaces and configuration loading.

All lengths are millimetres and all angles radians. Degrees only appear at
the config-file and CLI boundary.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np


class RigError(ValueError):
    """Raised for a rig description that violates a model invariant."""


class ConfigParseError(ValueError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    f_u: float = 1400.0
    f_v: float = 1400.0
    s: float = 0.0
    u_c: float = 640.0
    v_c: float = 480.0
    width: int = 1280
    height: int = 960

    def __post_init__(self):
        if not (self.f_u > 0 and self.f_v > 0):
            raise RigError("focal lengths f_u, f_v must be positive")
        if not (0 <= self.u_c <= self.width and 0 <= self.v_c <= self.height):
            raise RigError("principal point must lie inside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.f_u, self.s, self.u_c],
                         [0.0, self.f_v, self.v_c],
                         [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        fu, fv, s, uc, vc = self.f_u, self.f_v, self.s, self.u_c, self.v_c
        return np.array([[1.0 / fu, -s / (fu * fv), (s * vc - fv * uc) / (fu * fv)],
                         [0.0, 1.0 / fv, -vc / fv],
                         [0.0, 0.0, 1.0]])

    @property
    def f(self) -> float:
        """Mean focal length in pixels."""
        return 0.5 * (self.f_u + self.f_v)


@dataclass(frozen=True)
class RigSpec:
    """The six design parameters plus camera and material constants.

    ``theta`` exposes the design vector ``[c1, c2, k1, k2, d, r_sys]``.
    """
    c1: float
    c2: float
    k1: float
    k2: float
    d: float
    r_sys: float
    camera: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    r_cam: float = 7.0
    r_lens: float = 7.0
    tau_m: float = 3.0
    rho_mir: float = 8.5
    rho_tub: float = 1.18
    m_cam: float = 25.0
    tube_wall: float = 2.0

    def __post_init__(self):
        for name in ("c1", "c2"):
            if not getattr(self, name) > 0:
                raise RigError(f"{name} must be positive")
        for name in ("k1", "k2"):
            if not getattr(self, name) > 2:
                raise RigError(f"{name} must exceed 2")
        for name in ("d", "r_sys", "r_cam"):
            if not getattr(self, name) > 0:
                raise RigError(f"{name} must be positive")
        if self.tau_m <= 0:
            raise RigError("tau_m must be positive")

    @property
    def theta(self) -> np.ndarray:
        return np.array([self.c1, self.c2, self.k1, self.k2, self.d, self.r_sys])

    def with_theta(self, theta) -> "RigSpec":
        c1, c2, k1, k2, d, r_sys = (float(t) for t in theta)
        return replace(self, c1=c1, c2=c2, k1=k1, k2=k2, d=d, r_sys=r_sys)

    @property
    def baseline(self) -> float:
        return abs(self.c1 + self.c2 - self.d)

    @property
    def f1(self) -> np.ndarray:
        """Primary focus of mirror 1 in the camera frame."""
        return np.array([0.0, 0.0, self.c1])

    @property
    def f2(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.d - self.c2])

    @property
    def f2v(self) -> np.ndarray:
        """Virtual camera pinhole (mirror 2 secondary focus)."""
        return np.array([0.0, 0.0, self.d])

    def focus(self, mirror: int) -> np.ndarray:
        return self.f1 if mirror == 1 else self.f2

    def spec_hash(self) -> str:
        """Stable short digest of every parameter, used for provenance."""
        parts = []
        for fl in fields(self):
            v = getattr(self, fl.name)
            if isinstance(v, CameraIntrinsics):
                parts.extend(f"{c.name}={getattr(v, c.name)!r}" for c in fields(v))
            else:
                parts.append(f"{fl.name}={v!r}")
        return hashlib.sha256(";".join(parts).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class MirrorSurface:
    index: int
    c: float
    k: float
    a: float
    b: float
    z0: float
    r_min: float
    r_max: float
    theta_min: float
    theta_max: float
    focus: tuple

    @property
    def sign(self) -> int:
        # mirror 1 uses the upper sheet, mirror 2 the lower one
        return 1 if self.index == 1 else -1

    def residual(self, r, z):
        """Hyperboloid equation residual (zero on the surface)."""
        r = np.asarray(r, dtype=float)
        z = np.asarray(z, dtype=float)
        return (z - self.z0) ** 2 / self.a ** 2 - r ** 2 / self.b ** 2 - 1.0

    def elevation(self, r, z):
        """Elevation of surface point (r, z) seen from the primary focus."""
        return np.arctan2(np.asarray(z, dtype=float) - self.focus[2], r)


def semi_axes(c: float, k: float) -> tuple[float, float]:
    a = 0.5 * c * math.sqrt((k - 2.0) / k)
    b = 0.5 * c * math.sqrt(2.0 / k)
    return a, b


def _z_unbounded(surface: MirrorSurface, r):
    gamma = surface.a / surface.b * np.sqrt(surface.b ** 2 + np.asarray(r, dtype=float) ** 2)
    return surface.z0 + surface.sign * gamma


def _r_unbounded(surface: MirrorSurface, z):
    arg = (np.asarray(z, dtype=float) - surface.z0) ** 2 / surface.a ** 2 - 1.0
    with np.errstate(invalid="ignore"):
        return surface.b * np.sqrt(arg)


def f_z(surface: MirrorSurface, r: float, tol: float = 1e-9, bounded: bool = True) -> Optional[float]:
    """Height of the mirror surface at radius ``r``; None outside [r_min, r_max].

    ``bounded=False`` evaluates the full hyperboloid sheet instead.
    """
    if bounded and not (surface.r_min - tol <= r <= surface.r_max + tol):
        return None
    return float(_z_unbounded(surface, r))


def f_r(surface: MirrorSurface, z: float, tol: float = 1e-9, bounded: bool = True) -> Optional[float]:
    """Non-negative radius of the surface at height ``z``, or None.

    None is returned when ``z`` lies on the wrong side of the vertex or
    the resulting radius falls outside the mirror's radial bounds (skipped
    when ``bounded`` is False, e.g. to reach the vertex of mirror 1).
    """
    if surface.sign * (z - surface.z0) < surface.a - tol:
        return None
    arg = (z - surface.z0) ** 2 / surface.a ** 2 - 1.0
    r = surface.b * math.sqrt(max(arg, 0.0))
    if bounded and not (surface.r_min - tol <= r <= surface.r_max + tol):
        return None
    return r


def reflex_radius(spec: RigSpec) -> float:
    """Radius where mirror 1 meets the reflex plane z = d/2."""
    a1, b1 = semi_axes(spec.c1, spec.k1)
    z = 0.5 * spec.d
    dz = z - 0.5 * spec.c1
    if dz < a1:
        raise RigError("reflex plane z = d/2 does not intersect mirror 1")
    return b1 * math.sqrt(dz ** 2 / a1 ** 2 - 1.0)


def derive_surfaces(spec: RigSpec) -> tuple[MirrorSurface, MirrorSurface]:
    """Build both mirror surfaces with radial and elevation limits."""
    r_ref = reflex_radius(spec)
    a1, b1 = semi_axes(spec.c1, spec.k1)
    a2, b2 = semi_axes(spec.c2, spec.k2)
    z01 = 0.5 * spec.c1
    z02 = spec.d - 0.5 * spec.c2

    def zr(z0, a, b, sign, r):
        return z0 + sign * a / b * math.sqrt(b * b + r * r)

    f1z = spec.c1
    f2z = spec.d - spec.c2
    th1_max = math.atan2(zr(z01, a1, b1, 1, spec.r_sys) - f1z, spec.r_sys)
    th1_min = math.atan2(zr(z01, a1, b1, 1, r_ref) - f1z, r_ref)
    th2_min = math.atan2(zr(z02, a2, b2, -1, spec.r_sys) - f2z, spec.r_sys)
    th2_max = math.atan2(zr(z02, a2, b2, -1, spec.r_cam) - f2z, spec.r_cam)
    if r_ref >= spec.r_sys:
        raise RigError("reflex rim radius must be smaller than r_sys")
    if spec.r_cam >= spec.r_sys:
        raise RigError("camera hole radius must be smaller than r_sys")

    m1 = MirrorSurface(1, spec.c1, spec.k1, a1, b1, z01, r_ref, spec.r_sys,
                       th1_min, th1_max, (0.0, 0.0, f1z))
    m2 = MirrorSurface(2, spec.c2, spec.k2, a2, b2, z02, spec.r_cam, spec.r_sys,
                       th2_min, th2_max, (0.0, 0.0, f2z))
    return m1, m2


def surface_at_elevation(surface: MirrorSurface, theta):
    """Surface point (r, z) whose elevation from the primary focus is ``theta``.

    Closed form: distance along the focal ray is
    ``c / (sqrt(k(k-2)) - sign * k * sin(theta))``. Element-wise, unbounded.
    """
    theta = np.asarray(theta, dtype=float)
    k, c = surface.k, surface.c
    s = c / (math.sqrt(k * (k - 2.0)) - surface.sign * k * np.sin(theta))
    return s * np.cos(theta), surface.focus[2] + s * np.sin(theta)


def load_spec(path) -> RigSpec:
    """Parse a flat ``key = value`` rig file into a validated RigSpec."""
    text = Path(path).read_text(encoding="utf-8")
    values: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigParseError(f"{path}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS and key not in OPTIONAL_KEYS:
            raise ConfigParseError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = float(val)
        except ValueError:
            raise ConfigParseError(f"{path}:{lineno}: {key} is not a number: {val!r}") from None
    missing = [k for k in CONFIG_KEYS if k not in values]
    if missing:
        raise ConfigParseError(f"{path}: missing keys: {', '.join(missing)}")
    return spec_from_mapping(values)


# file key -> (RigSpec/CameraIntrinsics attribute)
CONFIG_KEYS = {
    "c1_mm": "c1", "c2_mm": "c2", "d_mm": "d", "k1": "k1", "k2": "k2",
    "r_sys_mm": "r_sys", "r_cam_mm": "r_cam", "r_lens_mm": "r_lens",
    "tau_m_mm": "tau_m", "rho_mir_g_cm3": "rho_mir", "rho_tub_g_cm3": "rho_tub",
    "m_cam_g": "m_cam", "f_u_px": "f_u", "f_v_px": "f_v", "skew": "s",
    "u_c_px": "u_c", "v_c_px": "v_c", "width_px": "width", "height_px": "height",
}
OPTIONAL_KEYS = {"tube_wall_mm": "tube_wall"}
_CAMERA_ATTRS = {"f_u", "f_v", "s", "u_c", "v_c", "width", "height"}


def spec_from_mapping(values: dict) -> RigSpec:
    cam_kw, rig_kw = {}, {}
    for key, val in values.items():
        attr = CONFIG_KEYS.get(key) or OPTIONAL_KEYS[key]
        if attr in _CAMERA_ATTRS:
            cam_kw[attr] = int(val) if attr in ("width", "height") else val
        else:
            rig_kw[attr] = val
    return RigSpec(camera=CameraIntrinsics(**cam_kw), **rig_kw)


def dump_spec(spec: RigSpec) -> str:
    """Serialise to the rig file format (round-trips through load_spec)."""
    lines = []
    for key, attr in {**CONFIG_KEYS, **OPTIONAL_KEYS}.items():
        src = spec.camera if attr in _CAMERA_ATTRS else spec
        lines.append(f"{key} = {getattr(src, attr)!r}")
    return "\n".join(lines) + "\n"


BIG_RIG = RigSpec(c1=123.49, c2=241.80, k1=5.73, k2=9.74, d=233.68, r_sys=37.0)
SMALL_RIG = RigSpec(c1=104.59, c2=204.34, k1=6.88, k2=11.47, d=200.00, r_sys=28.0)
