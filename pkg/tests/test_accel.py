import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diracsearch import _accel, builtin
from diracsearch.bloch import momentum_grid

needs_numba = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")


@needs_numba
@pytest.mark.parametrize("name", ["staggered-hypercubic-3", "kagome", "dirac-square"])
def test_block_kernels_agree(name):
    spec = builtin(name)
    ks = momentum_grid(spec.d, 6)
    ent = _accel._prep_entries(*spec.entries)
    a = _accel.fill_blocks_numpy(ks, *ent, spec.r)
    b = _accel.fill_blocks_numba(ks, *ent, spec.r)
    assert np.abs(a - b).max() < 1e-13
    fa, da = _accel.chiral_invariants_numpy(ks, *ent, spec.r)
    fb, db = _accel.chiral_invariants_numba(ks, *ent, spec.r)
    assert np.allclose(fa, fb, atol=1e-12) and np.allclose(da, db, atol=1e-13)


@needs_numba
@given(st.integers(1, 400), st.floats(-3, 3), st.integers(0, 2**31))
def test_sum_kernels_agree(size, z, seed):
    rng = np.random.default_rng(seed)
    e = rng.uniform(-4, 4, size)
    e[rng.random(size) < 0.1] = 0.0
    w = rng.random(size)
    if np.min(np.abs(e - z)) < 1e-3:
        return
    a = _accel.resolvent_sums_numpy(e, w, z)
    b = _accel.resolvent_sums_numba(e, w, z)
    assert np.allclose(a, b, rtol=1e-10, atol=1e-10)
    ma = _accel.moment_sums_numpy(e, w, 3, 1e-9)
    mb = _accel.moment_sums_numba(e, w, 3, 1e-9)
    assert np.allclose(ma, mb, rtol=1e-10, atol=1e-10)


def test_env_flag_selects_numpy():
    code = "from diracsearch import _accel; print(_accel.USE_NUMBA)"
    env = dict(os.environ, DIRACSEARCH_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "False"


def test_results_identical_without_numba():
    code = (
        "from diracsearch import builtin\n"
        "from diracsearch.resolvent import lattice_moments, find_roots\n"
        "s = builtin('staggered-hypercubic-3')\n"
        "print(repr(lattice_moments(s, 8, 0, 2).moments[2]), repr(find_roots(s, 8, 0, 'projector')[1]))\n"
    )
    outs = []
    for flag in ("0", "1"):
        env = dict(os.environ, DIRACSEARCH_DISABLE_NUMBA=flag)
        outs.append(subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout.split())
    a, b = (np.array(o, dtype=float) for o in outs)
    assert np.allclose(a, b, rtol=1e-12)
