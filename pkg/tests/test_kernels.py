import os
import subprocess
import sys

import numpy as np
import pytest

from geomaml import _kernels as K

pytestmark = pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba backend not active")


@pytest.mark.parametrize("shape", [(1, 1, 2, 2), (2, 3, 4, 6), (3, 5, 8, 8)])
def test_numba_matches_numpy(shape):
    rng = np.random.default_rng(sum(shape))
    x = rng.normal(size=shape)
    np.testing.assert_array_equal(K.im2col3(x), K.im2col3_numpy(x))
    out_nb, arg_nb = K.maxpool2(x)
    out_np, arg_np = K.maxpool2_numpy(x)
    np.testing.assert_array_equal(out_nb, out_np)
    np.testing.assert_array_equal(arg_nb, arg_np)
    g = rng.normal(size=out_np.shape)
    np.testing.assert_array_equal(K.unpool2(g, arg_np), K.unpool2_numpy(g, arg_np))
    np.testing.assert_array_equal(K.gatherpool2(x, arg_np), K.gatherpool2_numpy(x, arg_np))


def test_maxpool_ties_pick_first_window_entry():
    x = np.zeros((1, 1, 2, 2))
    assert K.maxpool2(x)[1].ravel().tolist() == K.maxpool2_numpy(x)[1].ravel().tolist() == [0]


@pytest.mark.parametrize("flag,expected", [("1", "numpy"), ("0", "numba")])
def test_env_flag_selects_backend(flag, expected):
    env = dict(os.environ, GEOMAML_DISABLE_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", "from geomaml._kernels import backend; print(backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expected
