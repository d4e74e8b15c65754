import os
import subprocess
import sys

import numpy as np
import pytest

from omnistereo import _kernels
from omnistereo.harness import synthetic_scene
from omnistereo.projection import _kernel_params

pytestmark = pytest.mark.skipif(_kernels.project_mirror_jit is None, reason="numba missing")


def test_project_paths_agree(big, rng):
    pts, _, _ = synthetic_scene(big, 300, seed=0)
    junk = rng.normal(0, 2000, (300, 3))
    allp = np.ascontiguousarray(np.vstack([pts, junk, [[0, 0, big.c1]], [[0, 0, 1e4]]]))
    for mirror in (1, 2):
        params = _kernel_params(big, mirror)
        a = _kernels.project_mirror_jit(allp, params)
        b = _kernels.project_mirror_numpy(allp, params)
        assert np.array_equal(np.isnan(a), np.isnan(b))
        assert np.allclose(a[~np.isnan(a)], b[~np.isnan(b)], atol=1e-9, rtol=0)


def test_remap_paths_agree(rng):
    img = rng.random((40, 50, 3))
    mu = rng.uniform(-2, 52, (30, 20))
    mv = rng.uniform(-2, 42, (30, 20))
    mu[0, 0] = np.nan
    a = _kernels.bilinear_remap_jit(img, mu, mv, 0.0)
    b = _kernels.bilinear_remap_numpy(img, mu, mv, 0.0)
    assert np.allclose(a, b, atol=1e-12)


def test_ncc_paths_agree(rng):
    pan = rng.random((60, 25))
    other = np.roll(pan, -3, axis=0) + rng.normal(0, 0.01, pan.shape)
    da, sa = _kernels.vertical_ncc_jit(pan, other, 2, 8)
    db, sb = _kernels.vertical_ncc_numpy(pan, other, 2, 8)
    assert np.array_equal(da, db, equal_nan=True)
    assert np.allclose(np.nan_to_num(sa, nan=-9), np.nan_to_num(sb, nan=-9), atol=1e-9)


def test_env_flag_selects_numpy_path():
    env = dict(os.environ, OMNISTEREO_DISABLE_NUMBA="1")
    code = ("from omnistereo import _kernels as k; "
            "print(k.USE_NUMBA, k.project_mirror is k.project_mirror_numpy)")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["False", "True"]


def test_default_uses_numba():
    env = {k: v for k, v in os.environ.items() if k != "OMNISTEREO_DISABLE_NUMBA"}
    code = "from omnistereo import _kernels as k; print(k.USE_NUMBA)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "True"
