"""Cylindrical panoramas: lookup tables, rectification and vertical matching.

Panorama cell ``(u, v)`` (column, row) looks along azimuth
``psi = 2*pi - u*l_px`` and elevation ``theta = atan(z_cyl_max - v*l_px)``,
so row 0 is the highest elevation and columns run clockwise when viewed from
above, which reads correctly for a viewer inside the cylinder.

Because F1 sits above F2, a scene point always appears *higher* in the
mirror-2 panorama than in the mirror-1 panorama. Disparity is therefore
``v1 - v2`` and is positive for every point in front of the rig.
"""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from . import _kernels
from .fileio import atomic_write_bytes
from .analysis import system_elevation_limits
from .projection import PixelPoint, pixel_of_surface_point, surface
from .rig import RigSpec, surface_at_elevation

LUT_MAGIC = b"OSLUT1"
_LUT_HEADER = struct.Struct("<6sBII16sII")  # magic, mirror, w, h, spec hash, src w, src h
NCC_THRESHOLD = 0.8
DEFAULT_WIDTH = 1280


class PanoramaError(ValueError):
    pass


@dataclass(frozen=True)
class PanoramaGeometry:
    h_cyl: float
    z_cyl_max: float
    z_cyl_min: float
    w_pan: int
    h_pan: int
    l_px: float

    @property
    def theta_max(self) -> float:
        return math.atan(self.z_cyl_max)

    @property
    def theta_min(self) -> float:
        return math.atan(self.z_cyl_min)

    def cell_angles(self):
        """(theta, psi) grids of shape (h_pan, w_pan)."""
        u = np.arange(self.w_pan, dtype=float)
        v = np.arange(self.h_pan, dtype=float)
        psi = np.mod(2.0 * np.pi - u * self.l_px, 2.0 * np.pi)
        theta = np.arctan(self.z_cyl_max - v * self.l_px)
        return np.broadcast_to(theta[:, None], (self.h_pan, self.w_pan)), \
            np.broadcast_to(psi[None, :], (self.h_pan, self.w_pan))

    def cell_of(self, theta, psi):
        """Continuous (u, v) of a viewing direction."""
        u = np.mod(2.0 * np.pi - np.asarray(psi), 2.0 * np.pi) / self.l_px
        v = (self.z_cyl_max - np.tan(theta)) / self.l_px
        return u, v


def panorama_geometry(spec: Optional[RigSpec] = None, w_pan: Optional[int] = None,
                      h_pan: Optional[int] = None, theta_limits=None) -> PanoramaGeometry:
    """Panorama size from one given dimension and the system elevation limits.

    ``theta_limits`` (min, max) in radians overrides the limits taken from ``spec``.
    """
    if (w_pan is None) == (h_pan is None):
        raise PanoramaError("give exactly one of w_pan or h_pan")
    given = w_pan if w_pan is not None else h_pan
    if given is None or given <= 0:
        raise PanoramaError("panorama dimension must be positive")
    if theta_limits is None:
        if spec is None:
            raise PanoramaError("need a rig spec or explicit elevation limits")
        theta_limits = system_elevation_limits(spec)
    t_min, t_max = theta_limits
    z_max, z_min = math.tan(t_max), math.tan(t_min)
    h_cyl = z_max - z_min
    if not h_cyl > 0:
        raise PanoramaError("elevation limits must be increasing")
    if w_pan is not None:
        w = int(w_pan)
        l_px = 2.0 * math.pi / w
        h = max(1, int(round(h_cyl / l_px)))
    else:
        h = int(h_pan)
        l_px = h_cyl / h
        w = max(1, int(round(2.0 * math.pi / l_px)))
    return PanoramaGeometry(h_cyl, z_max, z_min, w, h, l_px)


@dataclass(frozen=True)
class PanoramaLUT:
    mirror: int
    geometry: PanoramaGeometry
    map_u: np.ndarray  # (h_pan, w_pan) source column in image I, NaN where masked
    map_v: np.ndarray
    spec_hash: str = ""
    source_shape: tuple = (0, 0)  # (height, width) of the omnidirectional image

    @property
    def mask(self) -> np.ndarray:
        return np.isfinite(self.map_u) & np.isfinite(self.map_v)


def build_lut(spec: RigSpec, geom: PanoramaGeometry, mirror: int) -> PanoramaLUT:
    """Source pixel in image I for every cell of mirror ``mirror``'s panorama.

    Each cell's viewing ray from the mirror focus is intersected with the
    mirror (the direction of the cylinder point ``(cos psi, sin psi, tan theta)``)
    and that reflection point is imaged. Cells outside the mirror's
    elevation band are masked with NaN.
    """
    s = surface(spec, mirror)
    theta, psi = geom.cell_angles()
    r, z = surface_at_elevation(s, theta)
    pts = np.stack([r * np.cos(psi), r * np.sin(psi), z], axis=-1)
    m = pixel_of_surface_point(spec, pts, mirror)
    tol = 1e-12
    valid = (theta >= s.theta_min - tol) & (theta <= s.theta_max + tol) & np.isfinite(r) & (r > 0)
    map_u = np.where(valid, m[..., 0], np.nan)
    map_v = np.where(valid, m[..., 1], np.nan)
    cam = spec.camera
    return PanoramaLUT(mirror, geom, map_u, map_v, spec.spec_hash(), (cam.height, cam.width))


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def lut_to_bytes(lut: PanoramaLUT) -> bytes:
    g = lut.geometry
    header = _LUT_HEADER.pack(LUT_MAGIC, lut.mirror, g.w_pan, g.h_pan,
                              lut.spec_hash.encode("ascii")[:16].ljust(16, b"\0"),
                              lut.source_shape[1], lut.source_shape[0])
    geo = struct.pack("<4d", g.h_cyl, g.z_cyl_max, g.z_cyl_min, g.l_px)
    cells = np.stack([lut.map_u, lut.map_v], axis=-1).astype("<f4")
    return header + geo + cells.tobytes(order="C")


def write_lut(path, lut: PanoramaLUT) -> None:
    atomic_write_bytes(path, lut_to_bytes(lut))


def read_lut(path) -> PanoramaLUT:
    data = Path(path).read_bytes()
    if len(data) < _LUT_HEADER.size + 32 or data[:6] != LUT_MAGIC:
        raise PanoramaError(f"{path}: not a panorama LUT file")
    magic, mirror, w, h, digest, src_w, src_h = _LUT_HEADER.unpack_from(data)
    h_cyl, z_max, z_min, l_px = struct.unpack_from("<4d", data, _LUT_HEADER.size)
    off = _LUT_HEADER.size + 32
    expected = off + w * h * 8
    if len(data) != expected:
        raise PanoramaError(f"{path}: truncated LUT ({len(data)} of {expected} bytes)")
    cells = np.frombuffer(data, dtype="<f4", offset=off).reshape(h, w, 2).astype(np.float64)
    geom = PanoramaGeometry(h_cyl, z_max, z_min, w, h, l_px)
    return PanoramaLUT(mirror, geom, cells[..., 0], cells[..., 1],
                       digest.rstrip(b"\0").decode("ascii"), (src_h, src_w))


def read_image(path) -> np.ndarray:
    """PGM/PPM (or anything Pillow reads) as uint8 (H, W) or (H, W, 3)."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if len(im.getbands()) >= 3 else "L")
        return np.asarray(im).copy()


def write_image(path, img: np.ndarray) -> None:
    """Write a PGM (2-D) or PPM (3 channels) atomically."""
    arr = np.clip(np.rint(np.asarray(img, dtype=float)), 0, 255).astype(np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PPM")  # Pillow writes P5 for L, P6 for RGB
    atomic_write_bytes(path, buf.getvalue())


# ---------------------------------------------------------------------------
# rectification
# ---------------------------------------------------------------------------

def rectify(image: np.ndarray, lut: PanoramaLUT, method: str = "bilinear",
            fill: float = 0.0) -> np.ndarray:
    """Sample ``image`` at the LUT source coordinates.

    Returns float64 with the image's channel layout; masked cells get ``fill``.
    ``method`` is "bilinear" or "nearest".
    """
    img = np.asarray(image)
    if lut.source_shape != (0, 0) and img.shape[:2] != tuple(lut.source_shape):
        raise PanoramaError(f"image is {img.shape[1]}x{img.shape[0]}, LUT expects "
                            f"{lut.source_shape[1]}x{lut.source_shape[0]}")
    squeeze = img.ndim == 2
    img3 = img[..., None] if squeeze else img
    map_u = np.where(lut.mask, lut.map_u, -1.0)
    map_v = np.where(lut.mask, lut.map_v, -1.0)
    if method == "nearest":
        H, W = img3.shape[:2]
        ui = np.rint(map_u).astype(np.int64)
        vi = np.rint(map_v).astype(np.int64)
        ok = lut.mask & (ui >= 0) & (vi >= 0) & (ui < W) & (vi < H)
        out = np.full(map_u.shape + (img3.shape[2],), float(fill))
        out[ok] = img3[vi[ok], ui[ok]]
    elif method == "bilinear":
        out = _kernels.bilinear_remap(np.ascontiguousarray(img3, dtype=np.float64),
                                      np.ascontiguousarray(map_u), np.ascontiguousarray(map_v),
                                      float(fill))
    else:
        raise PanoramaError(f"unknown interpolation {method!r}")
    return out[..., 0] if squeeze else out


# ---------------------------------------------------------------------------
# correspondences
# ---------------------------------------------------------------------------

def disparity_to_match(m1, disparity: float, h_pan: Optional[int] = None) -> PixelPoint:
    """Mirror-2 panorama cell matching ``m1`` at vertical ``disparity`` (= v1 - v2)."""
    if not disparity > 0:
        raise PanoramaError("disparity must be positive")
    u1, v1 = (m1.u, m1.v) if isinstance(m1, PixelPoint) else (float(m1[0]), float(m1[1]))
    v2 = v1 - disparity
    if v2 < 0 or (h_pan is not None and v2 > h_pan - 1):
        raise PanoramaError(f"matched row {v2:.3f} lies outside the panorama")
    return PixelPoint(u1, v2, "Xi2")


def match_columns(pan1: np.ndarray, pan2: np.ndarray, window: int = 5,
                  max_disparity: int = 64, threshold: float = NCC_THRESHOLD) -> np.ndarray:
    """Per-cell vertical NCC matching of pan1 (reference) against pan2.

    For each cell the window in ``pan2`` is searched at rows ``v - 1 ... v -
    max_disparity``. The best score is refined by a parabola through its
    neighbours. Returns float disparities with NaN where the score is below
    ``threshold`` or the window leaves the image.
    """
    p1 = np.asarray(pan1, dtype=np.float64)
    p2 = np.asarray(pan2, dtype=np.float64)
    if p1.ndim == 3:
        p1 = p1.mean(axis=2)
    if p2.ndim == 3:
        p2 = p2.mean(axis=2)
    if p1.shape != p2.shape:
        raise PanoramaError("panoramas must have the same dimensions")
    if window < 1 or window > min(p1.shape):
        raise PanoramaError("window larger than the panorama")
    half = window // 2
    # flip rows so the search runs toward increasing row index in the kernel
    best, scores = _kernels.vertical_ncc(np.ascontiguousarray(p1[::-1]),
                                         np.ascontiguousarray(p2[::-1]), half, int(max_disparity))
    best, scores = best[::-1], scores[::-1]
    s_m, s_0, s_p = scores[..., 0], scores[..., 1], scores[..., 2]
    with np.errstate(invalid="ignore", divide="ignore"):
        curv = s_m - 2.0 * s_0 + s_p
        delta = np.where(np.isfinite(curv) & (curv < 0), 0.5 * (s_m - s_p) / curv, 0.0)
    delta = np.clip(delta, -0.5, 0.5)
    disp = best + delta
    disp[~(s_0 >= threshold)] = np.nan
    return disp
