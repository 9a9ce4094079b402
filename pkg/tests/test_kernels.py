import os
import subprocess
import sys

import numpy as np
import pytest

from ddsg import _kernels, hdmr
from ddsg import sparse_grid as sg
from ddsg import testfunctions as tf

needs_numba = pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not installed")


@pytest.fixture(scope="module")
def expansion():
    f = tf.product_peak(5, width=2.0, center=0.4)
    return hdmr.decompose(f, 5, 2, eps_eta=0.0, anchor=hdmr.center_anchor(f, 5), level=4, eps_gamma=1e-4)


@needs_numba
@pytest.mark.parametrize("mode", sg.BOUNDARY_MODES)
def test_grid_backends_agree(mode):
    g = sg.build(tf.sqrt_product, 3, 6, 1e-4, mode)
    X = np.random.default_rng(0).random((3000, 3))
    a = g.interpolate(X, backend="numba")
    b = g.interpolate(X, backend="numpy")
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)


@needs_numba
def test_bundle_backends_agree(expansion):
    v = expansion.vectorized
    X = np.random.default_rng(1).random((2000, 5))
    np.testing.assert_allclose(v.evaluate_batch(X, backend="numba"), v.evaluate_batch(X, backend="numpy"),
                               rtol=0, atol=1e-13)
    va, ga = v.evaluate_batch_grad(X, [0, 3], backend="numba")
    vb, gb = v.evaluate_batch_grad(X, [0, 3], backend="numpy")
    np.testing.assert_allclose(va, vb, rtol=0, atol=1e-13)
    np.testing.assert_allclose(ga, gb, rtol=0, atol=1e-11)


@pytest.mark.parametrize("backend", ["numpy", pytest.param("numba", marks=needs_numba)])
def test_gradient_matches_finite_differences(expansion, backend):
    v = expansion.vectorized
    # keep away from kinks of the piecewise-linear interpolant by staying off dyadic points
    X = 0.05 + 0.9 * np.random.default_rng(2).random((50, 5))
    val, grad = v.evaluate_batch_grad(X, [1, 2], backend=backend)
    np.testing.assert_allclose(val, v.evaluate_batch(X, backend=backend), rtol=0, atol=1e-14)
    h = 1e-7
    for c, col in enumerate([1, 2]):
        Xp, Xm = X.copy(), X.copy()
        Xp[:, col] += h
        Xm[:, col] -= h
        fd = (v.evaluate_batch(Xp, backend=backend) - v.evaluate_batch(Xm, backend=backend)) / (2 * h)
        np.testing.assert_allclose(grad[:, :, c], fd, rtol=1e-5, atol=1e-6)


def test_unknown_backend_rejected():
    g = sg.build(tf.sqrt_product, 2, 3)
    with pytest.raises(ValueError):
        g.interpolate(np.array([0.2, 0.3]), backend="fortran")


@pytest.mark.parametrize("flag,expected", [("1", "numpy"), ("", None)])
def test_env_flag_selects_backend(flag, expected):
    env = dict(os.environ, DDSG_DISABLE_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", "import ddsg; print(ddsg.backend_name())"],
                         capture_output=True, text=True, env=env, check=True).stdout.strip()
    if expected is None:
        expected = "numba" if _kernels.HAVE_NUMBA else "numpy"
    assert out == expected
