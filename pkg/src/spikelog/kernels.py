"""Time-to-first-spike coding primitives.

A neuron fires at the first integer timestep dt in [0, window] where its
membrane potential meets the dynamic threshold v_threshold * kappa(dt),
with kappa the decaying kernel 2**(-dt/tau).  Firing one step later
scales the decoded value by 2**(-1/tau), which is what makes shift-based
arithmetic possible downstream.  Everything here is double precision;
fixed-point handling lives in the quantization and engine modules.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

NO_SPIKE = -1


class KernelBase(enum.Enum):
    """Kernel family: power-of-two decay or natural-exponential reference."""

    POW2 = "pow2"
    EXP = "exp"


@dataclass(frozen=True)
class KernelParams:
    """Shared coding parameters for one network.

    Attributes:
        window: number of timesteps per encoding window; spikes land in
            [0, window] inclusive.
        tau: decay time constant in timesteps.
        v_threshold: threshold scale at dt == 0.
        base: kernel family. POW2 is the operational kernel; EXP exists
            only as a reference for parity checks.
    """

    window: int = 24
    tau: int = 4
    v_threshold: float = 1.0
    base: KernelBase = KernelBase.POW2

    def __post_init__(self):
        if int(self.window) != self.window or self.window < 1:
            raise ValueError(f"window must be a positive integer, got {self.window}")
        if int(self.tau) != self.tau or self.tau < 1:
            raise ValueError(f"tau must be a positive integer, got {self.tau}")
        if not np.isfinite(self.v_threshold) or self.v_threshold <= 0:
            raise ValueError(f"v_threshold must be positive, got {self.v_threshold}")


@dataclass(frozen=True)
class ExpKernelParams(KernelParams):
    """Natural-exponential reference kernel exp(-(dt - delay) / tau_exact).

    Kept for comparison tests against the power-of-two kernel; converted
    networks never run on it.
    """

    base: KernelBase = KernelBase.EXP
    delay: int = 0
    tau_exact: float = 4.0

    def __post_init__(self):
        super().__post_init__()
        if self.base is not KernelBase.EXP:
            raise ValueError("ExpKernelParams requires base=EXP")
        if not np.isfinite(self.tau_exact) or self.tau_exact <= 0:
            raise ValueError(f"tau_exact must be positive, got {self.tau_exact}")


def pow2_tau_ok(k: KernelParams) -> bool:
    """True when tau is a power of two, the shift-grid compatibility condition."""
    return k.tau & (k.tau - 1) == 0


@lru_cache(maxsize=64)
def kernel_table(k: KernelParams) -> np.ndarray:
    """Kernel values kappa(dt) for dt = 0..window, computed once per params.

    Every decode and threshold evaluation reads this table so that equal
    dt always yields bit-identical values across code paths.
    """
    dt = np.arange(k.window + 1, dtype=np.float64)
    if k.base is KernelBase.POW2:
        table = np.exp2(-dt / k.tau)
    else:
        table = np.exp(-(dt - k.delay) / k.tau_exact)  # type: ignore[attr-defined]
    table.flags.writeable = False
    return table


@lru_cache(maxsize=64)
def threshold_table(k: KernelParams) -> np.ndarray:
    """Dynamic threshold v_threshold * kappa(dt) for dt = 0..window."""
    table = k.v_threshold * kernel_table(k)
    table.flags.writeable = False
    return table


def _check_dt(k: KernelParams, dt) -> np.ndarray:
    dt = np.asarray(dt)
    if not np.issubdtype(dt.dtype, np.integer):
        if not np.all(dt == np.floor(dt)):
            raise ValueError("dt must be integer-valued")
        dt = dt.astype(np.int64)
    if np.any(dt < 0) or np.any(dt > k.window):
        raise ValueError(f"dt outside [0, {k.window}]")
    return dt


def kernel_value(k: KernelParams, dt):
    """Kernel kappa(dt) at integer dt in [0, window].

    Args:
        k: coding parameters.
        dt: scalar or array of timestep offsets.

    Returns:
        float or float64 array of kernel values.
    """
    idx = _check_dt(k, dt)
    out = kernel_table(k)[idx]
    return float(out) if np.isscalar(dt) or np.ndim(dt) == 0 else out


def dynamic_threshold(k: KernelParams, dt):
    """Firing threshold v_threshold * kappa(dt); dt beyond the window is an error."""
    idx = _check_dt(k, dt)
    out = threshold_table(k)[idx]
    return float(out) if np.isscalar(dt) or np.ndim(dt) == 0 else out


def spike_times(k: KernelParams, u) -> np.ndarray:
    """First timestep where each membrane value meets the dynamic threshold.

    Args:
        k: coding parameters.
        u: membrane potentials, any shape.

    Returns:
        int64 array of the same shape: the smallest dt in [0, window]
        with u >= v_threshold * kappa(dt), or NO_SPIKE when the value
        never crosses within the window (u <= 0 included).

    The closed form dt = ceil(tau * log2(v_threshold / u)) is corrected
    against the threshold table to stay exact at representable values
    where floating-point log2 can land a hair on the wrong side.
    """
    u = np.asarray(u, dtype=np.float64)
    thr = threshold_table(k)
    out = np.full(u.shape, NO_SPIKE, dtype=np.int64)
    fires = u >= thr[-1]
    if not np.any(fires):
        return out
    uf = u[fires]
    if k.base is KernelBase.POW2:
        raw = k.tau * np.log2(k.v_threshold / uf)
        dt = np.clip(np.ceil(raw), 0, k.window).astype(np.int64)
        for _ in range(2):
            down = (dt > 0) & (uf >= thr[np.maximum(dt - 1, 0)])
            if not np.any(down):
                break
            dt[down] -= 1
        for _ in range(2):
            up = uf < thr[dt]
            if not np.any(up):
                break
            dt[up] += 1  # cannot pass window: uf >= thr[window] here
    else:
        # reference kernel: count thresholds strictly above u, which is the
        # first index meeting the fire condition in a descending table
        dt = k.window + 1 - np.searchsorted(thr[::-1], uf, side="right")
    out[fires] = dt
    return out


def spike_time(k: KernelParams, u: float) -> Optional[int]:
    """Scalar spike_times; returns None instead of NO_SPIKE."""
    dt = int(spike_times(k, np.asarray([u]))[0])
    return None if dt == NO_SPIKE else dt


def ttfs_activation(k: KernelParams, x):
    """Value reconstructed from encoding x as a spike time and decoding it.

    Zero for inputs that never fire, v_threshold for saturating inputs,
    otherwise v_threshold * kappa(spike_time(x)).  The output set is
    exactly {0} | {v_threshold * kappa(j) for j = 0..window}.
    """
    x_arr = np.asarray(x, dtype=np.float64)
    dt = spike_times(k, x_arr)
    decoded = k.v_threshold * kernel_table(k)[np.maximum(dt, 0)]
    out = np.where(dt >= 0, decoded, 0.0)
    return float(out) if np.ndim(x) == 0 else out


def ttfs_activation_grad(k: KernelParams, x):
    """Straight-through surrogate derivative: 1 on the covered input range.

    The range is [v_threshold * kappa(window), v_threshold): below it the
    neuron stays silent, at or above v_threshold the code saturates.
    """
    x_arr = np.asarray(x, dtype=np.float64)
    lo = threshold_table(k)[-1]
    out = np.where((x_arr >= lo) & (x_arr < k.v_threshold), 1.0, 0.0)
    return float(out) if np.ndim(x) == 0 else out


def ttfs_relaxation(k: KernelParams, x):
    """Piecewise-linear envelope whose derivative equals ttfs_activation_grad.

    Gradient checks differentiate this forward; training itself uses the
    stepped ttfs_activation with the surrogate gradient.
    """
    x_arr = np.asarray(x, dtype=np.float64)
    lo = threshold_table(k)[-1]
    out = np.clip(x_arr, lo, k.v_threshold)
    return float(out) if np.ndim(x) == 0 else out


def clip_activation(v_threshold: float, x):
    """Clip to [0, v_threshold], the intermediate training stage activation."""
    out = np.clip(np.asarray(x, dtype=np.float64), 0.0, v_threshold)
    return float(out) if np.ndim(x) == 0 else out


def clip_activation_grad(v_threshold: float, x):
    """Derivative of the clip stage: 1 strictly inside (0, v_threshold)."""
    x_arr = np.asarray(x, dtype=np.float64)
    out = np.where((x_arr > 0.0) & (x_arr < v_threshold), 1.0, 0.0)
    return float(out) if np.ndim(x) == 0 else out
