"""Command-line entry point: ``omnistereo <subcommand> --config RIG ...``.

Exit status is 0 on success, 1 on domain errors (bad geometry, infeasible
design, unreadable data) and 2 on usage errors. Every output file is written
to a temporary name and renamed into place.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time

import numpy as np

from . import __version__
from .analysis import alpha1_for_k, analysis_report, baseline_vs_k1, resolution_curve
from .fileio import atomic_write_text
from .harness import DEFAULT_RANGES, monte_carlo_covariance, rmse_experiment, synthetic_scene
from .optimizer import ConstraintSet, InfeasibleError, OptimizerOptions, optimize
from .panorama import (build_lut, match_columns, panorama_geometry, read_image, read_lut,
                       rectify, write_image, write_lut)
from .rig import RigSpec, load_spec
from .triangulation import (TriangulationError, midpoint_points, propagate_uncertainty,
                            range_sweep, triangulate_naive)
from .backprojection import backproject

log = logging.getLogger("omnistereo")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _clean(obj):
    """Make a structure JSON-safe: NaN/inf -> None, numpy -> python."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "nan" if not math.isfinite(v) else repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _emit(text: str, out) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        atomic_write_text(out, text)
        log.info("wrote %s", out)


def _load(args) -> RigSpec:
    spec = load_spec(args.config)
    log.info("spec_hash=%s config=%s", spec.spec_hash(), args.config)
    return spec


def _read_rows(path, ncols):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != ncols:
                raise ValueError(f"{path}:{lineno}: expected {ncols} numbers, got {len(parts)}")
            rows.append([float(p) for p in parts])
    return np.array(rows, dtype=float).reshape(-1, ncols)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_optimize(args) -> int:
    template = _load(args)
    cons = ConstraintSet(payload_g=args.payload, h_max=args.h_max,
                         alpha_sroi_min_deg=args.sroi_min)
    opts = OptimizerOptions(seeds=args.seeds, seed=args.seed)
    lo, hi = cons.bounds
    start = None if args.no_start else template.theta
    if start is not None and (np.any(start < lo) or np.any(start > hi)):
        log.warning("config design lies outside the bound box; using random starts only")
        start = None
    try:
        theta, b, report = optimize(start, template, cons, opts)
    except InfeasibleError as exc:
        if args.out:
            _emit(_json(exc.report), args.out)
        log.error("%s", exc)
        return 1
    _emit(_json(report), args.out)
    print(f"b_star = {b:.4f} mm  theta_star = " + " ".join(f"{t:.4f}" for t in theta),
          file=sys.stderr)
    return 0


def cmd_analyze(args) -> int:
    spec = _load(args)
    rep = analysis_report(spec, args.samples)
    if args.format == "json":
        _emit(_json(rep), args.out)
        return 0
    rows = [("baseline_mm", "", rep["baseline_mm"]), ("r_ref_mm", "", rep["r_ref_mm"]),
            ("h_sys_mm", "", rep["h_sys_mm"]), ("m_sys_g", "", rep["m_sys_g"]),
            ("imaging_ratio", "", rep["imaging_ratio"])]
    rows += [("fov_deg", k, v) for k, v in sorted(rep["fov_deg"].items())]
    for name in ("p_high", "p_mid", "p_low"):
        rows += [("stereo_roi", f"{name}_rho", rep["stereo_roi"][name][0]),
                 ("stereo_roi", f"{name}_z", rep["stereo_roi"][name][1])]
    for mirror, curve in sorted(rep["resolution"].items()):
        for th, eta, eta2 in curve:
            rows += [(f"resolution_{mirror}", repr(th), eta)]
    _emit(_csv(("section", "key", "value"), rows), args.out)
    return 0


def cmd_lut(args) -> int:
    spec = _load(args)
    geom = panorama_geometry(spec, w_pan=args.width if args.height is None else None,
                             h_pan=args.height)
    lut = build_lut(spec, geom, args.mirror)
    write_lut(args.out, lut)
    log.info("lut mirror=%d %dx%d valid=%d", args.mirror, geom.w_pan, geom.h_pan, int(lut.mask.sum()))
    return 0


def cmd_rectify(args) -> int:
    spec = _load(args)
    lut = read_lut(args.lut)
    if lut.spec_hash != spec.spec_hash():
        log.warning("LUT was built for spec %s, config is %s", lut.spec_hash, spec.spec_hash())
    img = read_image(args.image)
    pan = rectify(img, lut, "nearest" if args.nearest else "bilinear", args.fill)
    write_image(args.out, pan)
    return 0


def _interp_rows(map_, v, u):
    """Linear interpolation of a LUT map along rows at fractional ``v``."""
    h = map_.shape[0]
    v0 = np.clip(np.floor(v).astype(int), 0, h - 1)
    v1 = np.clip(v0 + 1, 0, h - 1)
    t = v - v0
    return (1 - t) * map_[v0, u] + t * map_[v1, u]


def cmd_match(args) -> int:
    if (args.lut1 is None) != (args.lut2 is None):
        raise UsageError("--lut1 and --lut2 must be given together")
    _load(args)
    pan1 = read_image(args.pan1).astype(float)
    pan2 = read_image(args.pan2).astype(float)
    disp = match_columns(pan1, pan2, args.window, args.max_disparity, args.threshold)
    vv, uu = np.nonzero(np.isfinite(disp))
    d = disp[vv, uu]
    if args.lut1 is None:
        _emit(_csv(("u", "v", "disparity"), zip(uu, vv, d)), args.out)
        return 0
    l1, l2 = read_lut(args.lut1), read_lut(args.lut2)
    u1, v1 = l1.map_u[vv, uu], l1.map_v[vv, uu]
    v2_cell = vv - d
    u2, v2 = _interp_rows(l2.map_u, v2_cell, uu), _interp_rows(l2.map_v, v2_cell, uu)
    ok = np.isfinite(u1) & np.isfinite(v1) & np.isfinite(u2) & np.isfinite(v2) & (v2_cell >= 0)
    lines = "".join(f"{a!r} {b!r} {c!r} {e!r}\n" for a, b, c, e in
                    zip(u1[ok].tolist(), v1[ok].tolist(), u2[ok].tolist(), v2[ok].tolist()))
    _emit("# u1 v1 u2 v2\n" + lines, args.out)
    return 0


def cmd_triangulate(args) -> int:
    spec = _load(args)
    corr = _read_rows(args.input, 4)
    m1, m2 = corr[:, :2], corr[:, 2:]
    if args.method == "midpoint":
        pos, _ = midpoint_points(spec, m1, m2)
    else:
        pos = np.full((len(corr), 3), np.nan)
        for i in range(len(corr)):
            r1, r2 = backproject(spec, m1[i], 1), backproject(spec, m2[i], 2)
            if r1 is None or r2 is None:
                continue
            try:
                pos[i] = triangulate_naive(r1, r2, spec).position
            except TriangulationError:
                continue
    colour = np.full((len(corr), 3), 255, dtype=int)
    if args.image:
        img = read_image(args.image)
        img3 = img[..., None].repeat(3, axis=2) if img.ndim == 2 else img
        ui = np.clip(np.rint(m1[:, 0]).astype(int), 0, img3.shape[1] - 1)
        vi = np.clip(np.rint(m1[:, 1]).astype(int), 0, img3.shape[0] - 1)
        colour = img3[vi, ui, :3].astype(int)
    out = []
    skipped = 0
    for i in range(len(corr)):
        if not np.all(np.isfinite(pos[i])):
            skipped += 1
            continue
        cols = [repr(float(x)) for x in pos[i]] + [str(int(c)) for c in colour[i]]
        if args.covariance:
            try:
                cov = propagate_uncertainty(spec, m1[i], m2[i], args.sigma)
                cols += [repr(float(cov[a, b])) for a, b in ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))]
            except TriangulationError:
                cols += ["nan"] * 6
        out.append(" ".join(cols))
    if skipped:
        log.warning("%d of %d correspondences could not be triangulated", skipped, len(corr))
    _emit("".join(line + "\n" for line in out), args.out)
    return 0


def cmd_sweep(args) -> int:
    spec = _load(args)
    if args.kind == "range":
        theta = None if args.theta is None else math.radians(args.theta)
        rows = range_sweep(spec, range(1, args.max_disparity + 1), theta)
        text = _csv(("disparity_px", "rho_mm", "delta_rho_mm"), rows)
    elif args.kind == "baseline-k1":
        ks = np.linspace(args.k_min, args.k_max, args.steps)
        text = _csv(("k1", "c1_mm", "baseline_mm"), baseline_vs_k1(spec, ks))
    elif args.kind == "alpha1-k":
        ks = np.linspace(args.k_min, args.k_max, args.steps)
        text = _csv(("k1", "alpha1_deg"), ((k, math.degrees(alpha1_for_k(spec, k))) for k in ks))
    else:
        rows = [(m, *row) for m in (1, 2) for row in resolution_curve(spec, m, args.steps)]
        text = _csv(("mirror", "theta_rad", "eta", "eta_2d"), rows)
    _emit(text, args.out)
    return 0


def cmd_verify(args) -> int:
    spec = _load(args)
    ranges = tuple(args.ranges) if args.ranges else DEFAULT_RANGES
    table = rmse_experiment(spec, ranges, args.noise, args.seed)
    _emit(_csv(("range_mm", "rmse_mm", "sd_mm", "corners"), table), args.out)
    checks = []
    rmse = table[:, 1]
    checks.append(("rmse strictly increasing with range", bool(np.all(np.diff(rmse) > 0)),
                   " ".join(f"{r:.3f}" for r in rmse)))
    doubled = rmse_experiment(spec, ranges, 2 * args.noise, args.seed)[:, 1]
    ratio = doubled / rmse
    checks.append(("rmse linear in pixel noise (ratio in [1.6, 2.4])",
                   bool(np.all((ratio >= 1.6) & (ratio <= 2.4))), " ".join(f"{r:.3f}" for r in ratio)))
    clean = rmse_experiment(spec, ranges, 0.0, args.seed)[:, 1]
    checks.append(("noiseless rmse < 1e-6 mm", bool(np.all(clean < 1e-6)), f"max {clean.max():.3g}"))
    pts, m1, m2 = synthetic_scene(spec, 200, args.seed)
    est, _ = midpoint_points(spec, m1, m2)
    rel = np.linalg.norm(est - pts, axis=1) / np.linalg.norm(pts, axis=1)
    checks.append(("round trip relative error < 1e-6", bool(np.nanmax(rel) < 1e-6), f"max {np.nanmax(rel):.3g}"))
    emp, pred = monte_carlo_covariance(spec, pts[0], 1.0, args.trials, args.seed)
    tr = np.trace(emp) / np.trace(pred)
    checks.append(("monte carlo vs propagated trace within 50%", bool(0.5 <= tr <= 1.5), f"ratio {tr:.3f}"))
    ok = True
    for name, passed, detail in checks:
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name}  [{detail}]")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="omnistereo", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", metavar="SUBCOMMAND")

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="rig file (key = value lines)")
        sp.add_argument("--out", help="output path (default: stdout where applicable)")
        sp.set_defaults(func=func)
        return sp

    sp = add("optimize", cmd_optimize, "maximise the baseline under the design constraints")
    sp.add_argument("--h-max", type=float, default=150.0, help="max system height (mm)")
    sp.add_argument("--payload", type=float, default=650.0, help="mass limit (g)")
    sp.add_argument("--sroi-min", type=float, default=20.0, help="min stereo vFOV (deg)")
    sp.add_argument("--seeds", type=int, default=16)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--no-start", action="store_true", help="ignore the config design as a start")

    sp = add("analyze", cmd_analyze, "FOV, stereo ROI, resolution, height and mass report")
    sp.add_argument("--format", choices=("json", "csv"), default="json")
    sp.add_argument("--samples", type=int, default=64, help="resolution samples per mirror")

    sp = add("lut", cmd_lut, "build a panorama lookup table")
    sp.add_argument("--mirror", type=int, choices=(1, 2), required=True)
    sp.add_argument("--width", type=int, default=1280)
    sp.add_argument("--height", type=int, help="give the height instead of the width")

    sp = add("rectify", cmd_rectify, "unwrap an omnidirectional image with a LUT")
    sp.add_argument("--lut", required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--nearest", action="store_true", help="nearest-neighbour sampling")
    sp.add_argument("--fill", type=float, default=0.0)

    sp = add("match", cmd_match, "vertical NCC matching of two panoramas")
    sp.add_argument("--pan1", required=True)
    sp.add_argument("--pan2", required=True)
    sp.add_argument("--window", type=int, default=5)
    sp.add_argument("--max-disparity", type=int, default=64)
    sp.add_argument("--threshold", type=float, default=0.8)
    sp.add_argument("--lut1", help="with --lut2, emit image correspondences 'u1 v1 u2 v2'")
    sp.add_argument("--lut2")

    sp = add("triangulate", cmd_triangulate, "triangulate 'u1 v1 u2 v2' correspondences")
    sp.add_argument("--input", required=True)
    sp.add_argument("--method", choices=("midpoint", "naive"), default="midpoint")
    sp.add_argument("--covariance", action="store_true", help="append 6 covariance columns")
    sp.add_argument("--sigma", type=float, default=1.0, help="pixel noise (px)")
    sp.add_argument("--image", help="colour source image (sampled at m1)")

    sp = add("sweep", cmd_sweep, "parameter sweeps as CSV")
    sp.add_argument("--kind", choices=("range", "baseline-k1", "alpha1-k", "resolution"), default="range")
    sp.add_argument("--max-disparity", type=int, default=100)
    sp.add_argument("--theta", type=float, help="elevation for the range sweep (deg)")
    sp.add_argument("--k-min", type=float, default=2.5)
    sp.add_argument("--k-max", type=float, default=12.0)
    sp.add_argument("--steps", type=int, default=20)

    sp = add("verify", cmd_verify, "synthetic RMSE table and property checks")
    sp.add_argument("--ranges", type=float, nargs="+", help="ranges in mm")
    sp.add_argument("--noise", type=float, default=0.1, help="pixel noise (px)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--trials", type=int, default=1000)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("omnistereo: error: a subcommand is required", file=sys.stderr)
        return 2
    log.info("omnistereo %s %s started %s", __version__, args.command,
             time.strftime("%Y-%m-%dT%H:%M:%S"))
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"omnistereo: error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"omnistereo: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError, OSError) as exc:
        # RigError, ConfigParseError, PanoramaError, TriangulationError are ValueErrors
        print(f"omnistereo: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
