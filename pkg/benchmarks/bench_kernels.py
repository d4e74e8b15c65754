"""Compare the numba and pure-numpy kernel paths.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel is warmed once (so JIT compile time is excluded) and then timed
``repeat`` times; the best time is reported along with the max abs
difference between the two paths.
"""
import argparse
import time

import numpy as np

from omnistereo import _kernels
from omnistereo.harness import synthetic_scene
from omnistereo.panorama import build_lut, panorama_geometry
from omnistereo.projection import _kernel_params
from omnistereo.rig import BIG_RIG


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--points", type=int, default=200_000)
    args = ap.parse_args()

    if _kernels.project_mirror_jit is None:
        raise SystemExit("numba is not installed")

    spec = BIG_RIG
    pts, _, _ = synthetic_scene(spec, 2000, seed=0)
    pts = np.ascontiguousarray(np.resize(pts, (args.points, 3)))
    params = _kernel_params(spec, 1)

    geom = panorama_geometry(spec, w_pan=1280)
    lut = build_lut(spec, geom, 1)
    rng = np.random.default_rng(0)
    image = rng.random((spec.camera.height, spec.camera.width, 3))
    mu, mv = lut.map_u, lut.map_v

    pan = rng.random((geom.h_pan, 320))
    shifted = np.roll(pan, -5, axis=0)

    cases = [
        ("project", lambda k: k(pts, params),
         _kernels.project_mirror_jit, _kernels.project_mirror_numpy),
        ("remap", lambda k: k(image, mu, mv, 0.0),
         _kernels.bilinear_remap_jit, _kernels.bilinear_remap_numpy),
        ("ncc", lambda k: k(pan, shifted, 2, 32),
         _kernels.vertical_ncc_jit, _kernels.vertical_ncc_numpy),
    ]
    print(f"{'kernel':<10}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}{'max diff':>12}")
    for name, call, jit, ref in cases:
        tj = best_of(lambda: call(jit), args.repeat)
        tn = best_of(lambda: call(ref), args.repeat)
        a, b = call(jit), call(ref)
        if isinstance(a, tuple):
            a, b = a[0], b[0]
        diff = np.nanmax(np.abs(np.asarray(a, float) - np.asarray(b, float)))
        print(f"{name:<10}{tj * 1e3:>12.2f}{tn * 1e3:>12.2f}{tn / tj:>10.1f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
