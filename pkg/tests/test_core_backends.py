"""Compiled vs pure-python integration kernels must agree bit for bit.

Every case feeds identical arrays to both backends and compares the
accumulator contents and saturation counts with ==, not allclose: the
two implementations promise the same integer arithmetic, so any
difference at all is a bug.
"""

import os
import subprocess
import sys

import numpy as np
import pytest

from spikelog import _core
from spikelog._core import fallback
from spikelog.logquant import LogQuantScheme, build_lut, grid_unit_factors
from spikelog.kernels import KernelParams

HAVE_CYTHON = "cython" in _core.available_backends()

needs_cython = pytest.mark.skipif(
    not HAVE_CYTHON, reason="compiled extension not built")


def _lut_setup(frac_bits=15, acc_frac_bits=16):
    k = KernelParams()
    scheme = LogQuantScheme(fsr=0)
    lut = build_lut(k, scheme, frac_bits=frac_bits)
    fg, c_w, c_t = grid_unit_factors(k, scheme)
    entries = lut.entries.astype(np.int64)
    return entries, fg, c_w, c_t, acc_frac_bits - frac_bits


def _random_dense_case(rng, n_in=17, n_out=9, n_spikes=11, spread=8):
    sign = rng.choice(np.array([-1, 0, 1], dtype=np.int8), size=(n_in, n_out))
    grid = rng.integers(-spread, 2, size=(n_in, n_out), dtype=np.int32)
    ids = rng.permutation(n_in)[:n_spikes].astype(np.int64)
    dts = rng.integers(0, 24, size=n_spikes, dtype=np.int64)
    return sign, grid, ids, dts


def test_active_backend_is_listed_first():
    names = _core.available_backends()
    assert names[0] == _core.BACKEND
    assert "python" in names


def test_get_backend_by_name():
    assert _core.get_backend("python") is fallback
    with pytest.raises(ValueError, match="unknown backend"):
        _core.get_backend("turbo")
    if HAVE_CYTHON:
        assert _core.get_backend("cython").BACKEND == "cython"


def test_empty_spike_list_is_a_noop():
    entries, fg, c_w, c_t, shift = _lut_setup()
    acc = np.full(5, 7, dtype=np.int64)
    sat = fallback.integrate_dense(
        np.zeros(0, np.int64), np.zeros(0, np.int64),
        np.zeros((3, 5), np.int8), np.zeros((3, 5), np.int32),
        entries, fg, c_w, c_t, shift, acc)
    assert sat == 0
    assert np.array_equal(acc, np.full(5, 7))


@needs_cython
def test_dense_backends_agree_bit_for_bit():
    entries, fg, c_w, c_t, shift = _lut_setup()
    cy = _core.get_backend("cython")
    rng = np.random.default_rng(0)
    for trial in range(40):
        sign, grid, ids, dts = _random_dense_case(rng)
        acc_py = np.zeros(sign.shape[1], dtype=np.int64)
        acc_cy = np.zeros(sign.shape[1], dtype=np.int64)
        sat_py = fallback.integrate_dense(
            ids, dts, sign, grid, entries, fg, c_w, c_t, shift, acc_py)
        sat_cy = cy.integrate_dense(
            ids, dts, sign, grid, entries, fg, c_w, c_t, shift, acc_cy)
        assert sat_py == sat_cy
        assert np.array_equal(acc_py, acc_cy)


@needs_cython
def test_dense_backends_agree_under_saturation():
    # large positive grid indices force per-product clamps to ACC_MAX
    entries, fg, c_w, c_t, shift = _lut_setup()
    cy = _core.get_backend("cython")
    rng = np.random.default_rng(1)
    for trial in range(10):
        sign, grid, ids, dts = _random_dense_case(rng)
        grid = grid + 40  # push exponents well past the 31-bit ceiling
        acc_py = np.zeros(sign.shape[1], dtype=np.int64)
        acc_cy = np.zeros(sign.shape[1], dtype=np.int64)
        sat_py = fallback.integrate_dense(
            ids, dts, sign, grid, entries, fg, c_w, c_t, shift, acc_py)
        sat_cy = cy.integrate_dense(
            ids, dts, sign, grid, entries, fg, c_w, c_t, shift, acc_cy)
        assert sat_py > 0
        assert sat_py == sat_cy
        assert np.array_equal(acc_py, acc_cy)


@needs_cython
def test_sparse_backends_agree_bit_for_bit():
    entries, fg, c_w, c_t, shift = _lut_setup()
    cy = _core.get_backend("cython")
    rng = np.random.default_rng(2)
    for trial in range(40):
        n_in, n_out = 14, 6
        counts = rng.integers(0, 5, size=n_in)
        indptr = np.zeros(n_in + 1, dtype=np.int64)
        indptr[1:] = np.cumsum(counts)
        nnz = int(indptr[-1])
        indices = rng.integers(0, n_out, size=nnz, dtype=np.int32)
        sign = rng.choice(np.array([-1, 0, 1], dtype=np.int8), size=nnz)
        grid = rng.integers(-9, 2, size=nnz, dtype=np.int32)
        n_spikes = rng.integers(1, n_in)
        ids = rng.permutation(n_in)[:n_spikes].astype(np.int64)
        dts = rng.integers(0, 24, size=n_spikes, dtype=np.int64)
        acc_py = np.zeros(n_out, dtype=np.int64)
        acc_cy = np.zeros(n_out, dtype=np.int64)
        sat_py = fallback.integrate_sparse(
            ids, dts, indptr, indices, sign, grid,
            entries, fg, c_w, c_t, shift, acc_py)
        sat_cy = cy.integrate_sparse(
            ids, dts, indptr, indices, sign, grid,
            entries, fg, c_w, c_t, shift, acc_cy)
        assert sat_py == sat_cy
        assert np.array_equal(acc_py, acc_cy)


def test_right_shift_rounds_half_away():
    # entry 3 shifted right by 1 must become 2, not 1
    v, sat = fallback._products(
        np.array([-1], dtype=np.int64), np.array([3], dtype=np.int64), 0)
    assert v[0] == 2
    assert not sat[0]


def test_left_shift_saturates_and_counts():
    # 2**15 << 16 = 2**31 just exceeds the signed ceiling
    v, sat = fallback._products(
        np.array([16, 15], dtype=np.int64),
        np.array([32768, 32768], dtype=np.int64), 0)
    assert v[0] == fallback.ACC_MAX and sat[0]
    assert v[1] == 2**30 and not sat[1]


def test_pure_env_forces_fallback(tmp_path):
    env = dict(os.environ, SPIKELOG_PURE="1")
    out = subprocess.run(
        [sys.executable, "-c", "from spikelog import _core; print(_core.BACKEND)"],
        capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "python"


@needs_cython
def test_whole_model_output_matches_across_backends(tmp_path):
    # full pipeline cross-check: the same container run under each
    # backend must produce identical membrane integers
    from spikelog import modelio, nets
    from spikelog.conversion import convert
    from spikelog.engine import run_network

    rng = np.random.default_rng(5)
    net = nets.build_dense_net(6, [12, 8], 4, KernelParams(), bn=False, seed=5)
    model = convert(net, rng.uniform(0, 1, (16, 6)))
    path = tmp_path / "m.snn.spkl"
    modelio.save_model(model, path)
    x = rng.uniform(0, 1, 6)
    here = run_network(model, x, mode="fixed")
    script = (
        "import sys, numpy as np\n"
        "from spikelog import modelio\n"
        "from spikelog.engine import run_network\n"
        "model = modelio.load_model(sys.argv[1])\n"
        "x = np.array([float(v) for v in sys.argv[2].split(',')])\n"
        "r = run_network(model, x, mode='fixed')\n"
        "print(','.join(str(int(v)) for v in r.output_vmem.values))\n"
    )
    env = dict(os.environ, SPIKELOG_PURE="1")
    out = subprocess.run(
        [sys.executable, "-c", script, str(path),
         ",".join(repr(float(v)) for v in x)],
        capture_output=True, text=True, env=env, check=True)
    got = [int(v) for v in out.stdout.strip().split(",")]
    assert got == [int(v) for v in here.output_vmem.values]
