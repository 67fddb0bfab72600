"""Coding-layer tests: kernel values, spike times, activation round trips.

The spike-time oracle here is a deliberate linear scan of the fire
condition; the library's closed form must agree with it exactly.
"""

import numpy as np
import pytest

from spikelog import kernels as K
from spikelog.kernels import NO_SPIKE, ExpKernelParams, KernelParams

SQRT_HALF = 0.7071067811865476  # 2**-0.5


def scan_spike_time(k, u):
    """Independent oracle: first dt in [0, window] meeting the threshold."""
    for dt in range(k.window + 1):
        if u >= K.dynamic_threshold(k, dt):
            return dt
    return None


def test_kernel_value_frozen_points():
    k = KernelParams()
    assert K.kernel_value(k, 0) == 1.0
    assert K.kernel_value(k, 2) == SQRT_HALF
    assert K.kernel_value(k, 4) == 0.5
    assert K.kernel_value(k, 24) == 0.015625  # 2**-6 at the window end


def test_kernel_value_strictly_decreasing():
    for tau, window in [(4, 24), (2, 12), (8, 48), (1, 6)]:
        k = KernelParams(window=window, tau=tau)
        table = K.kernel_table(k)
        assert np.all(np.diff(table) < 0)
        assert table[0] == 1.0


def test_dynamic_threshold_scaling_and_domain():
    k = KernelParams(v_threshold=2.0)
    assert K.dynamic_threshold(k, 0) == 2.0
    assert K.dynamic_threshold(k, 4) == 1.0
    with pytest.raises(ValueError):
        K.dynamic_threshold(k, 25)
    with pytest.raises(ValueError):
        K.dynamic_threshold(k, -1)


def test_param_validation():
    with pytest.raises(ValueError):
        KernelParams(window=0)
    with pytest.raises(ValueError):
        KernelParams(tau=0)
    with pytest.raises(ValueError):
        KernelParams(v_threshold=0.0)
    with pytest.raises(ValueError):
        KernelParams(v_threshold=float("nan"))


def test_pow2_tau_check():
    assert K.pow2_tau_ok(KernelParams(tau=1))
    assert K.pow2_tau_ok(KernelParams(tau=8))
    assert not K.pow2_tau_ok(KernelParams(tau=3))


def test_spike_time_frozen_points():
    k = KernelParams()
    assert K.spike_time(k, SQRT_HALF) == 2  # exactly on the dt=2 threshold: fires
    assert K.spike_time(k, 1.0) == 0
    assert K.spike_time(k, 5.0) == 0  # saturation still fires immediately
    assert K.spike_time(k, 0.015625) == 24  # exactly the last threshold
    assert K.spike_time(k, 0.01) is None  # below the window cutoff
    assert K.spike_time(k, 0.0) is None
    assert K.spike_time(k, -3.0) is None


def test_spike_time_matches_scan_oracle():
    rng = np.random.default_rng(1234)
    for k in [KernelParams(), KernelParams(window=12, tau=2), KernelParams(window=48, tau=8)]:
        u = rng.uniform(-0.2, 1.5, 20000)
        closed = K.spike_times(k, u)
        scanned = np.array(
            [NO_SPIKE if scan_spike_time(k, v) is None else scan_spike_time(k, v) for v in u]
        )
        np.testing.assert_array_equal(closed, scanned)


def test_spike_time_exact_on_threshold_grid():
    # representable values sit exactly on thresholds; log2 rounding must not
    # push them to the neighbouring step
    for k in [KernelParams(), KernelParams(window=12, tau=2), KernelParams(v_threshold=0.75)]:
        thr = K.threshold_table(k)
        got = K.spike_times(k, thr)
        np.testing.assert_array_equal(got, np.arange(k.window + 1))


def test_ttfs_activation_frozen_points():
    k = KernelParams()
    assert K.ttfs_activation(k, 0.8) == SQRT_HALF  # ceil(4*log2(1/0.8)) == 2
    assert K.ttfs_activation(k, 0.5) == 0.5  # representable: exact
    assert K.ttfs_activation(k, 2.0) == 1.0  # saturates at v_threshold
    assert K.ttfs_activation(k, 1.0) == 1.0
    assert K.ttfs_activation(k, 0.01) == 0.0  # silent
    assert K.ttfs_activation(k, -1.0) == 0.0


def test_ttfs_activation_output_set():
    k = KernelParams()
    rng = np.random.default_rng(7)
    x = rng.uniform(-0.5, 1.5, 100000)
    vals = K.ttfs_activation(k, x)
    allowed = np.concatenate([[0.0], k.v_threshold * K.kernel_table(k)])
    assert np.all(np.isin(vals, allowed))


def test_ttfs_activation_idempotent_bit_exact():
    for k in [KernelParams(), KernelParams(window=12, tau=2), KernelParams(window=48, tau=8)]:
        rng = np.random.default_rng(99)
        x = rng.uniform(0.0, 1.2, 100000)
        once = K.ttfs_activation(k, x)
        twice = K.ttfs_activation(k, once)
        np.testing.assert_array_equal(once, twice)


def test_ttfs_activation_underestimate_bound():
    # mid-branch inputs decode to at most x and to more than x * 2**(-1/tau)
    k = KernelParams()
    rng = np.random.default_rng(5)
    lo = K.threshold_table(k)[-1]
    x = rng.uniform(lo, k.v_threshold, 50000)
    x = x[(x > lo) & (x < k.v_threshold)]
    phi = K.ttfs_activation(k, x)
    assert np.all(phi <= x)
    assert np.all(phi > x * np.exp2(-1.0 / k.tau))


def test_ttfs_activation_monotone():
    k = KernelParams()
    x = np.sort(np.random.default_rng(11).uniform(-0.2, 1.4, 20000))
    phi = K.ttfs_activation(k, x)
    assert np.all(np.diff(phi) >= 0)


def test_coding_error_envelope():
    # encoded-then-decoded values re-encode with zero error, while the clip
    # stage keeps its plain saturation error
    k = KernelParams()
    x = np.linspace(0.0, 1.2, 2411)
    phi = K.ttfs_activation(k, x)
    np.testing.assert_array_equal(K.ttfs_activation(k, phi), phi)
    clipped = K.clip_activation(k.v_threshold, x)
    inside = (x > 0) & (x < k.v_threshold)
    assert np.all(clipped[inside] == x[inside])
    assert np.all(clipped[x >= k.v_threshold] == k.v_threshold)


def test_ttfs_grad_frozen_points():
    k = KernelParams()
    lo = k.v_threshold * 0.015625
    assert K.ttfs_activation_grad(k, 0.5) == 1.0
    assert K.ttfs_activation_grad(k, lo) == 1.0  # closed at the silent boundary
    assert K.ttfs_activation_grad(k, 1.0) == 0.0  # open at saturation
    assert K.ttfs_activation_grad(k, 0.001) == 0.0
    assert K.ttfs_activation_grad(k, -0.5) == 0.0
    assert K.ttfs_activation_grad(k, 1.5) == 0.0


def test_clip_activation_and_grad():
    assert K.clip_activation(1.0, -0.5) == 0.0
    assert K.clip_activation(1.0, 0.3) == 0.3
    assert K.clip_activation(1.0, 1.7) == 1.0
    assert K.clip_activation_grad(1.0, 0.3) == 1.0
    assert K.clip_activation_grad(1.0, 0.0) == 0.0
    assert K.clip_activation_grad(1.0, 1.0) == 0.0


def test_ttfs_relaxation_matches_grad_mask():
    k = KernelParams()
    x = np.linspace(-0.5, 1.5, 10001)
    r = K.ttfs_relaxation(k, x)
    lo = K.threshold_table(k)[-1]
    np.testing.assert_array_equal(r, np.clip(x, lo, k.v_threshold))
    # central difference of the relaxation equals the surrogate mask away
    # from the two kinks
    h = 1e-6
    fd = (K.ttfs_relaxation(k, x + h) - K.ttfs_relaxation(k, x - h)) / (2 * h)
    mask = K.ttfs_activation_grad(k, x)
    away = (np.abs(x - lo) > 1e-3) & (np.abs(x - k.v_threshold) > 1e-3)
    np.testing.assert_allclose(fd[away], mask[away], atol=1e-9)


def test_exp_reference_kernel_parity():
    # natural-exponential reference with tau_exact = tau / ln 2 matches the
    # power-of-two kernel to float accuracy
    k2 = KernelParams()
    ke = ExpKernelParams(window=24, tau=4, tau_exact=4.0 / np.log(2.0))
    np.testing.assert_allclose(K.kernel_table(ke), K.kernel_table(k2), rtol=1e-12)
    # delayed variant shifts the curve
    kd = ExpKernelParams(window=8, tau=4, delay=2, tau_exact=2.0)
    assert K.kernel_value(kd, 2) == 1.0
    assert K.kernel_value(kd, 4) == pytest.approx(np.exp(-1.0))


def test_exp_reference_spike_times_match_scan():
    ke = ExpKernelParams(window=16, tau=4, tau_exact=5.0)
    rng = np.random.default_rng(3)
    u = rng.uniform(-0.1, 1.2, 5000)
    closed = K.spike_times(ke, u)
    scanned = np.array(
        [NO_SPIKE if scan_spike_time(ke, v) is None else scan_spike_time(ke, v) for v in u]
    )
    np.testing.assert_array_equal(closed, scanned)
