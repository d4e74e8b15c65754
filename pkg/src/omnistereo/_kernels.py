"""Hot inner loops, compiled with numba when available.

Every kernel has two implementations: an explicit-loop version that is
``@njit``-compiled and a vectorised pure-numpy version. The loop versions
are used unless numba is missing or ``OMNISTEREO_DISABLE_NUMBA=1`` is set
in the environment (read once at import). Both paths are kept numerically
equivalent and the test-suite compares them directly.
"""
import math
import os

import numpy as np

try:
    import numba
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

USE_NUMBA = _HAVE_NUMBA and os.environ.get("OMNISTEREO_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


def _njit(fn):
    if _HAVE_NUMBA:
        return numba.njit(cache=False, nogil=True)(fn)
    return fn


# ---------------------------------------------------------------------------
# forward projection through one hyperboloid
# ---------------------------------------------------------------------------
# params layout (float64[16]):
#   0 c, 1 k, 2 sign(+1 upper sheet / -1 lower), 3 focus_z, 4 r_min, 5 r_max,
#   6 z0, 7 a, 8 b, 9 d (virtual camera height, mirror 2 only), 10 f_u,
#   11 f_v, 12 skew, 13 u_c, 14 v_c, 15 folded (1.0 for mirror 2)

def _project_loop(P, params):
    n = P.shape[0]
    out = np.empty((n, 2))
    c, k, sign, fz = params[0], params[1], params[2], params[3]
    r_min, r_max, z0, a, b, d = params[4], params[5], params[6], params[7], params[8], params[9]
    fu, fv, sk, uc, vc, folded = params[10], params[11], params[12], params[13], params[14], params[15]
    root = math.sqrt(k * (k - 2.0))
    tol = 1e-9 * r_max
    for i in range(n):
        x, y, z = P[i, 0], P[i, 1], P[i, 2]
        out[i, 0] = np.nan
        out[i, 1] = np.nan
        dz = z - fz
        norm = math.sqrt(x * x + y * y + dz * dz)
        denom = norm * root - sign * k * dz
        if not (abs(denom) > 1e-12):
            continue
        lam = c / denom
        if not (lam > 0.0 and lam < 1.0):
            continue
        rho = math.sqrt(x * x + y * y)
        # external-position constraint
        h = sign * (z - z0)
        if h >= a:
            r_surf = b * math.sqrt((z - z0) * (z - z0) / (a * a) - 1.0)
            if r_surf >= r_min - tol and r_surf <= r_max + tol and r_surf >= rho:
                continue
        xr = lam * x
        yr = lam * y
        zr = fz + lam * dz
        rr = math.sqrt(xr * xr + yr * yr)
        if rr < r_min - tol or rr > r_max + tol:
            continue
        depth = d - zr if folded > 0.5 else zr
        if depth < 1e-9:
            continue
        qx = xr / depth
        qy = yr / depth
        out[i, 0] = fu * qx + sk * qy + uc
        out[i, 1] = fv * qy + vc
    return out


def _project_numpy(P, params):
    c, k, sign, fz = params[0], params[1], params[2], params[3]
    r_min, r_max, z0, a, b, d = params[4], params[5], params[6], params[7], params[8], params[9]
    fu, fv, sk, uc, vc, folded = params[10], params[11], params[12], params[13], params[14], params[15]
    tol = 1e-9 * r_max
    x, y, z = P[:, 0], P[:, 1], P[:, 2]
    dz = z - fz
    norm = np.sqrt(x * x + y * y + dz * dz)
    denom = norm * math.sqrt(k * (k - 2.0)) - sign * k * dz
    ok = np.abs(denom) > 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.where(ok, c / np.where(ok, denom, 1.0), np.nan)
        ok &= (lam > 0.0) & (lam < 1.0)
        rho = np.hypot(x, y)
        inside_z = sign * (z - z0) >= a
        r_surf = b * np.sqrt(np.where(inside_z, (z - z0) ** 2 / a ** 2 - 1.0, 0.0))
        blocked = inside_z & (r_surf >= r_min - tol) & (r_surf <= r_max + tol) & (r_surf >= rho)
        ok &= ~blocked
        xr, yr, zr = lam * x, lam * y, fz + lam * dz
        rr = np.hypot(xr, yr)
        ok &= (rr >= r_min - tol) & (rr <= r_max + tol)
        depth = d - zr if folded > 0.5 else zr
        ok &= depth >= 1e-9
        qx, qy = xr / depth, yr / depth
        u = fu * qx + sk * qy + uc
        v = fv * qy + vc
    out = np.stack([u, v], axis=-1)
    out[~ok] = np.nan
    return out


# ---------------------------------------------------------------------------
# bilinear remap (rectification)
# ---------------------------------------------------------------------------

def _remap_loop(image, map_u, map_v, fill):
    h, w = map_u.shape
    H, W = image.shape[0], image.shape[1]
    nch = image.shape[2]
    out = np.empty((h, w, nch))
    for i in range(h):
        for j in range(w):
            u = map_u[i, j]
            v = map_v[i, j]
            if not (u >= 0.0 and v >= 0.0 and u <= W - 1 and v <= H - 1):
                for ch in range(nch):
                    out[i, j, ch] = fill
                continue
            u0 = min(int(math.floor(u)), W - 2) if W > 1 else 0
            v0 = min(int(math.floor(v)), H - 2) if H > 1 else 0
            du = u - u0
            dv = v - v0
            u1 = min(u0 + 1, W - 1)
            v1 = min(v0 + 1, H - 1)
            for ch in range(nch):
                top = image[v0, u0, ch] * (1.0 - du) + image[v0, u1, ch] * du
                bot = image[v1, u0, ch] * (1.0 - du) + image[v1, u1, ch] * du
                out[i, j, ch] = top * (1.0 - dv) + bot * dv
    return out


def _remap_numpy(image, map_u, map_v, fill):
    H, W = image.shape[0], image.shape[1]
    ok = (map_u >= 0.0) & (map_v >= 0.0) & (map_u <= W - 1) & (map_v <= H - 1)
    u = np.where(ok, map_u, 0.0)
    v = np.where(ok, map_v, 0.0)
    u0 = np.minimum(np.floor(u).astype(np.int64), max(W - 2, 0))
    v0 = np.minimum(np.floor(v).astype(np.int64), max(H - 2, 0))
    du = (u - u0)[..., None]
    dv = (v - v0)[..., None]
    u1 = np.minimum(u0 + 1, W - 1)
    v1 = np.minimum(v0 + 1, H - 1)
    img = image.astype(np.float64)
    top = img[v0, u0] * (1.0 - du) + img[v0, u1] * du
    bot = img[v1, u0] * (1.0 - du) + img[v1, u1] * du
    out = top * (1.0 - dv) + bot * dv
    out[~ok] = fill
    return out


# ---------------------------------------------------------------------------
# vertical normalised cross-correlation scan
# ---------------------------------------------------------------------------
# For each reference cell (v, u) in pan1, compare the (2h+1)^2 window with
# pan2 windows centred at (v + disp, u) for disp in 1..max_disp. Returns the
# integer argmax disparity and the NCC at disp-1, disp, disp+1 for subpixel
# refinement done by the caller. Cells whose window leaves the image are NaN.

def _ncc_loop(pan1, pan2, half, max_disp):
    H, W = pan1.shape
    best_d = np.full((H, W), np.nan)
    scores = np.full((H, W, 3), np.nan)
    n = (2 * half + 1) * (2 * half + 1)
    ncc = np.empty(max_disp + 2)
    for v in range(half, H - half):
        for u in range(half, W - half):
            m1 = 0.0
            for a in range(-half, half + 1):
                for b in range(-half, half + 1):
                    m1 += pan1[v + a, u + b]
            m1 /= n
            s11 = 0.0
            for a in range(-half, half + 1):
                for b in range(-half, half + 1):
                    t = pan1[v + a, u + b] - m1
                    s11 += t * t
            if s11 <= 1e-12:
                continue
            best = -2.0
            bi = -1
            for dd in range(0, max_disp + 2):
                ncc[dd] = np.nan
                vc = v + dd
                if vc + half >= H:
                    continue
                m2 = 0.0
                for a in range(-half, half + 1):
                    for b in range(-half, half + 1):
                        m2 += pan2[vc + a, u + b]
                m2 /= n
                s22 = 0.0
                s12 = 0.0
                for a in range(-half, half + 1):
                    for b in range(-half, half + 1):
                        t2 = pan2[vc + a, u + b] - m2
                        s22 += t2 * t2
                        s12 += (pan1[v + a, u + b] - m1) * t2
                if s22 <= 1e-12:
                    continue
                ncc[dd] = s12 / math.sqrt(s11 * s22)
                if dd >= 1 and dd <= max_disp and ncc[dd] > best:
                    best = ncc[dd]
                    bi = dd
            if bi < 0:
                continue
            best_d[v, u] = bi
            scores[v, u, 0] = ncc[bi - 1]
            scores[v, u, 1] = ncc[bi]
            scores[v, u, 2] = ncc[bi + 1]
    return best_d, scores


def _window_stats(img, half):
    """Per-cell window mean and centred sum of squares (NaN where clipped)."""
    from numpy.lib.stride_tricks import sliding_window_view
    H, W = img.shape
    k = 2 * half + 1
    win = sliding_window_view(img, (k, k))  # (H-2h, W-2h, k, k)
    mean = win.mean(axis=(-1, -2))
    centred = win - mean[..., None, None]
    return win, mean, centred


def _ncc_numpy(pan1, pan2, half, max_disp):
    H, W = pan1.shape
    k = 2 * half + 1
    best_d = np.full((H, W), np.nan)
    scores = np.full((H, W, 3), np.nan)
    _, _, c1 = _window_stats(pan1.astype(np.float64), half)
    _, _, c2 = _window_stats(pan2.astype(np.float64), half)
    s11 = (c1 * c1).sum(axis=(-1, -2))
    s22 = (c2 * c2).sum(axis=(-1, -2))
    Hv = H - 2 * half
    ncc = np.full((max_disp + 2, Hv, W - 2 * half), np.nan)
    for dd in range(0, max_disp + 2):
        if dd >= Hv:
            break
        num = (c1[: Hv - dd] * c2[dd:]).sum(axis=(-1, -2))
        den = s11[: Hv - dd] * s22[dd:]
        with np.errstate(invalid="ignore", divide="ignore"):
            val = num / np.sqrt(den)
        val[(s11[: Hv - dd] <= 1e-12) | (s22[dd:] <= 1e-12)] = np.nan
        ncc[dd, : Hv - dd] = val
    inner = ncc[1: max_disp + 1]
    all_nan = np.all(np.isnan(inner), axis=0)
    filled = np.where(np.isnan(inner), -np.inf, inner)
    arg = np.argmax(filled, axis=0) + 1
    valid = ~all_nan & (s11 > 1e-12)
    rows, cols = np.nonzero(valid)
    a = arg[rows, cols]
    best_d[rows + half, cols + half] = a
    scores[rows + half, cols + half, 0] = ncc[a - 1, rows, cols]
    scores[rows + half, cols + half, 1] = ncc[a, rows, cols]
    scores[rows + half, cols + half, 2] = ncc[a + 1, rows, cols]
    return best_d, scores


if USE_NUMBA:
    project_mirror = _njit(_project_loop)
    bilinear_remap = _njit(_remap_loop)
    vertical_ncc = _njit(_ncc_loop)
else:
    project_mirror = _project_numpy
    bilinear_remap = _remap_numpy
    vertical_ncc = _ncc_numpy

# always-available references for equivalence tests and benchmarks
project_mirror_numpy = _project_numpy
bilinear_remap_numpy = _remap_numpy
vertical_ncc_numpy = _ncc_numpy
project_mirror_jit = _njit(_project_loop) if _HAVE_NUMBA else None
bilinear_remap_jit = _njit(_remap_loop) if _HAVE_NUMBA else None
vertical_ncc_jit = _njit(_ncc_loop) if _HAVE_NUMBA else None
