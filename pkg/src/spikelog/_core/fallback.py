"""Pure-numpy integration kernels.

Reference semantics for the batched fixed-point accumulate.  The
compiled module mirrors this decision tree exactly; backend equality
tests hold both to bit-identical outputs, so any change here must be
made in _fixedpoint.pyx as well.

Per product: exponent units = c_w * grid - c_t * dt on the common
fractional grid fg (a power of two).  The LUT entry for the fractional
part is shifted by the integer part plus shift_base
(acc_frac_bits - lut_frac_bits).  Left shifts that leave the signed
32-bit accumulator range clamp to ACC_MAX and are counted; right shifts
round half away from zero (operands are positive).  Accumulation itself
runs exact in int64; the engine clamps once per neuron at the end of the
integration phase.
"""

import numpy as np

BACKEND = "python"

ACC_MAX = 2**31 - 1
_LEFT_CAP = 21  # entry < 2**17, so any shift past this saturates anyway
_RIGHT_CAP = 48  # entry + half < 2**48, so any shift past this yields 0


def _products(ip, entry, shift_base):
    """Shifted LUT values and saturation mask for an array of integer exponents."""
    s = ip + shift_base
    left = s >= 0
    v = np.zeros_like(entry)
    ls = np.clip(s, 0, _LEFT_CAP)
    np.left_shift(entry, ls, out=v, where=left)
    sat = left & (v > ACC_MAX)
    v[sat] = ACC_MAX
    sh = np.clip(-s, 1, _RIGHT_CAP)
    half = np.left_shift(np.int64(1), sh - 1)
    rv = np.right_shift(entry + half, sh)
    return np.where(left, v, rv), sat


def integrate_dense(spike_ids, spike_dts, sign, grid, lut, fg, c_w, c_t, shift_base, acc):
    """Accumulate spike contributions through a dense weight matrix.

    Args:
        spike_ids: int64[n] input neuron ids.
        spike_dts: int64[n] in-window spike offsets.
        sign: int8[in_dim, out_dim] weight signs (0 = zero code).
        grid: int32[in_dim, out_dim] grid indices.
        lut: int64[fg] LUT entries.
        fg: fractional grid size (power of two).
        c_w, c_t: exponent unit factors.
        shift_base: acc_frac_bits - lut_frac_bits.
        acc: int64[out_dim], accumulated into in place.

    Returns:
        number of per-product saturation events.
    """
    if len(spike_ids) == 0:
        return 0
    g = grid[spike_ids, :].astype(np.int64)
    s = sign[spike_ids, :].astype(np.int64)
    units = c_w * g - c_t * np.asarray(spike_dts, dtype=np.int64)[:, None]
    f = np.mod(units, fg)
    ip = (units - f) // fg
    v, sat = _products(ip, lut[f], shift_base)
    sat &= s != 0
    acc += (s * v).sum(axis=0)
    return int(sat.sum())


def integrate_sparse(spike_ids, spike_dts, indptr, indices, sign, grid, lut, fg, c_w, c_t, shift_base, acc):
    """Accumulate spike contributions through a CSR synapse table.

    Row i of the CSR structure lists the outgoing synapses of input
    neuron i; column indices are output neuron ids.  Same arithmetic as
    integrate_dense.  Returns the per-product saturation count.
    """
    if len(spike_ids) == 0:
        return 0
    sat_total = 0
    for sid, dt in zip(np.asarray(spike_ids), np.asarray(spike_dts)):
        lo, hi = int(indptr[sid]), int(indptr[sid + 1])
        if lo == hi:
            continue
        g = grid[lo:hi].astype(np.int64)
        sg = sign[lo:hi].astype(np.int64)
        units = c_w * g - c_t * int(dt)
        f = np.mod(units, fg)
        ip = (units - f) // fg
        v, sat = _products(ip, lut[f], shift_base)
        sat_total += int((sat & (sg != 0)).sum())
        np.add.at(acc, indices[lo:hi], sg * v)
    return sat_total
