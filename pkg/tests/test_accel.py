import os
import subprocess
import sys

import numpy as np
import pytest

from pertinf import _accel

needs_numba = pytest.mark.skipif(not _accel.numba_impl, reason="numba not installed")


@needs_numba
def test_score_moments_backends_agree():
    s = np.random.default_rng(0).standard_normal((500, 4))
    a = _accel.numpy_impl["score_moments"](s, True)
    b = _accel.numba_impl["score_moments"](s, True)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-10)


@needs_numba
def test_connection_accel_backends_agree():
    gen = np.random.default_rng(1)
    p = 5
    ginv = np.linalg.inv(np.eye(p) + 0.1 * np.ones((p, p)))
    gam = gen.standard_normal((p, p, p))
    v = gen.standard_normal(p)
    np.testing.assert_allclose(_accel.numpy_impl["connection_accel"](ginv, gam, v),
                               _accel.numba_impl["connection_accel"](ginv, gam, v), rtol=1e-12)


@needs_numba
def test_rayleigh_batch_backends_agree():
    gen = np.random.default_rng(2)
    a = gen.standard_normal((6, 6))
    a = a + a.T
    g = np.eye(6) * 2.0
    hs = gen.standard_normal((40, 6))
    for x, y in zip(_accel.numpy_impl["rayleigh_batch"](a, g, hs), _accel.numba_impl["rayleigh_batch"](a, g, hs)):
        np.testing.assert_allclose(x, y, rtol=1e-12)


def test_score_moments_matches_einsum():
    s = np.random.default_rng(3).standard_normal((50, 3))
    m2, sq, m3 = _accel.score_moments(s)
    np.testing.assert_allclose(m2, s.T @ s, rtol=1e-12)
    np.testing.assert_allclose(sq, np.einsum("ni,nj->ij", s ** 2, s ** 2), rtol=1e-12)
    np.testing.assert_allclose(m3, np.einsum("ni,nj,nk->ijk", s, s, s), rtol=1e-12)


def test_env_flag_selects_numpy():
    env = dict(os.environ, PERTINF_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "import pertinf; print(pertinf.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
