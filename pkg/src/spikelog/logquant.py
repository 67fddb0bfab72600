"""Logarithmic weight quantization and shift-based product arithmetic.

Weights live on a power-of-two grid: value = sign * 2**(grid_index * step)
with step = 2**-step_exp octaves (default half an octave).  A product of
a grid weight with a kernel value 2**(-dt/tau) is then itself a power of
2**(1/frac_grid), so one small lookup table of fractional powers plus a
shift replaces every multiplier.  The table is kept in 16-bit fixed
point with 15 fractional bits; accumulation downstream uses a signed
32-bit accumulator with 16 fractional bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Tuple

import numpy as np

from .kernels import KernelParams, pow2_tau_ok

ACC_BITS = 32
ACC_MAX = 2 ** (ACC_BITS - 1) - 1


@dataclass(frozen=True)
class LogQuantScheme:
    """Grid description for one quantized tensor.

    Attributes:
        bit_width: total code width including the sign bit; the magnitude
            field carries 2**(bit_width - 1) - 1 usable codes plus one
            reserved exact-zero code.
        step_exp: grid resolution; the log2-domain step is 2**-step_exp,
            so step_exp=1 means half-octave steps (ratio 2**-0.5).
        fsr: grid index of the largest representable magnitude.
    """

    bit_width: int = 5
    step_exp: int = 1
    fsr: int = 0

    def __post_init__(self):
        if self.bit_width < 2:
            raise ValueError(f"bit_width must be >= 2, got {self.bit_width}")
        if self.step_exp < 0:
            raise ValueError(f"step_exp must be >= 0, got {self.step_exp}")

    @property
    def num_codes(self) -> int:
        return 2 ** (self.bit_width - 1) - 1

    @property
    def grid_min(self) -> int:
        return self.fsr - (self.num_codes - 1)

    @property
    def step(self) -> float:
        """Grid step in the log2 domain."""
        return 2.0**-self.step_exp

    def grid_values(self) -> np.ndarray:
        """All representable magnitudes, ascending."""
        return np.exp2(np.arange(self.grid_min, self.fsr + 1) * self.step)


class QuantizedWeight(NamedTuple):
    """One quantized scalar; sign == 0 encodes the reserved zero code."""

    sign: int
    grid_index: int


@dataclass(eq=False)
class QuantizedWeights:
    """Array of grid codes with the scheme they were quantized under."""

    sign: np.ndarray  # int8, values in {-1, 0, +1}
    grid_index: np.ndarray  # int32, within [scheme.grid_min, scheme.fsr]
    scheme: LogQuantScheme

    def __post_init__(self):
        if self.sign.shape != self.grid_index.shape:
            raise ValueError("sign and grid_index shapes differ")
        nz = self.sign != 0
        if np.any((self.grid_index[nz] < self.scheme.grid_min) | (self.grid_index[nz] > self.scheme.fsr)):
            raise ValueError("grid_index outside the representable range")

    @property
    def shape(self) -> tuple:
        return self.sign.shape

    def values(self) -> np.ndarray:
        """Dequantized float64 view of the codes."""
        mags = np.exp2(self.grid_index * self.scheme.step)
        return self.sign * mags

    def item(self, idx) -> QuantizedWeight:
        return QuantizedWeight(int(self.sign[idx]), int(self.grid_index[idx]))


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def quantize_weights(
    weights,
    bit_width: int = 5,
    step_exp: int = 1,
    zero_flush: bool = True,
) -> QuantizedWeights:
    """Project a real tensor onto the log grid.

    The grid anchor fsr is ceil of the largest magnitude's grid exponent,
    so the top code covers max|w|.  Rounding is nearest in log distance,
    halves away from zero.  With zero_flush on, magnitudes more than half
    a grid step below the smallest code (in log distance) are flushed to
    the zero code; with it off they clamp onto the smallest code, which
    mirrors the plain clipping formulation and exists for parity tests.

    Raises:
        ValueError: on an all-zero or non-finite tensor, where no grid
            anchor exists.
    """
    w = np.asarray(weights, dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    mags = np.abs(w)
    wmax = mags.max() if w.size else 0.0
    if wmax == 0.0:
        raise ValueError("cannot quantize an all-zero tensor: no grid anchor")
    steps_per_octave = 2**step_exp
    fsr = int(math.ceil(steps_per_octave * math.log2(wmax)))
    scheme = LogQuantScheme(bit_width=bit_width, step_exp=step_exp, fsr=fsr)

    nz = mags > 0.0
    e_real = np.zeros_like(w)
    e_real[nz] = steps_per_octave * np.log2(mags[nz])
    e = np.clip(_round_half_away(e_real), scheme.grid_min, scheme.fsr).astype(np.int32)

    zero = ~nz
    if zero_flush:
        zero |= nz & (e_real < scheme.grid_min - 0.5)

    sign = np.sign(w).astype(np.int8)
    sign[zero] = 0
    e[zero] = scheme.grid_min
    return QuantizedWeights(sign=sign, grid_index=e, scheme=scheme)


def frac_grid_for(k: KernelParams, scheme: LogQuantScheme) -> int:
    """Common fractional grid: lcm of the spike-time and weight-grid denominators."""
    return math.lcm(k.tau, 2**scheme.step_exp)


def grid_unit_factors(k: KernelParams, scheme: LogQuantScheme) -> Tuple[int, int, int]:
    """(frac_grid, c_w, c_t): exponent in frac-grid units is c_w*grid_index - c_t*dt."""
    fg = frac_grid_for(k, scheme)
    return fg, fg // 2**scheme.step_exp, fg // k.tau


@dataclass(eq=False)
class ShiftLut:
    """Fractional-power table 2**(f / frac_grid) in unsigned fixed point.

    entries[f] is round(2**(f / frac_grid) * 2**frac_bits), stored as
    uint16; entries[0] is exactly one.
    """

    frac_grid: int
    entries: np.ndarray  # uint16
    frac_bits: int = 15


def build_lut(k: KernelParams, scheme: LogQuantScheme, frac_bits: int = 15) -> ShiftLut:
    """Build the shift LUT for a kernel/grid pair.

    Raises:
        ValueError: when tau is not a power of two; spike-time exponents
            then fall off any finite fractional grid and no LUT exists.
    """
    if not pow2_tau_ok(k):
        raise ValueError(f"tau must be a power of two for shift arithmetic, got {k.tau}")
    if not 1 <= frac_bits <= 15:
        raise ValueError(f"frac_bits must be in [1, 15], got {frac_bits}")
    fg = frac_grid_for(k, scheme)
    f = np.arange(fg, dtype=np.float64)
    entries = np.rint(np.exp2(f / fg) * 2.0**frac_bits).astype(np.uint16)
    return ShiftLut(frac_grid=fg, entries=entries, frac_bits=frac_bits)


def decompose_exponent(p_hat: float, frac_grid: int) -> Tuple[int, int]:
    """Split an exponent into (integer part, fractional index) by floor.

    p_hat must sit exactly on the fractional grid; off-grid values are a
    contract violation, never silently rounded.
    """
    scaled = p_hat * frac_grid
    units = round(scaled)
    if scaled != units:
        raise ValueError(f"exponent {p_hat} is off the 1/{frac_grid} grid")
    return units // frac_grid, units % frac_grid


def log_multiply(
    w: QuantizedWeight,
    spike_dt: int,
    k: KernelParams,
    lut: ShiftLut,
    scheme: LogQuantScheme,
) -> float:
    """Product of a grid weight and a kernel value, multiplier-free.

    Computes sign * LUT(frac) * 2**int_part for the combined exponent
    grid_index * step - spike_dt / tau.  The only error source is the
    LUT entry rounding, so the result stays within relative 2**-14 of
    the exact real product.  The zero code short-circuits to exact 0.
    """
    if w.sign == 0:
        return 0.0
    if spike_dt < 0 or spike_dt > k.window:
        raise ValueError(f"spike_dt outside [0, {k.window}]")
    fg, c_w, c_t = grid_unit_factors(k, scheme)
    if fg != lut.frac_grid:
        raise ValueError("LUT frac_grid does not match the kernel/scheme pair")
    units = c_w * w.grid_index - c_t * spike_dt
    int_part, f = units // fg, units % fg
    return w.sign * math.ldexp(int(lut.entries[f]), int_part - lut.frac_bits)


def log_multiply_fixed(
    w: QuantizedWeight,
    spike_dt: int,
    k: KernelParams,
    lut: ShiftLut,
    scheme: LogQuantScheme,
    acc_frac_bits: int = 16,
) -> Tuple[int, bool]:
    """log_multiply rounded into accumulator units, with saturation flag.

    Returns (value in units of 2**-acc_frac_bits, saturated).  Shifts
    that leave the signed 32-bit accumulator range clamp to its limits
    and report saturation instead of wrapping.  This scalar form is the
    reference semantics for the batched integration kernels.
    """
    if w.sign == 0:
        return 0, False
    if spike_dt < 0 or spike_dt > k.window:
        raise ValueError(f"spike_dt outside [0, {k.window}]")
    fg, c_w, c_t = grid_unit_factors(k, scheme)
    if fg != lut.frac_grid:
        raise ValueError("LUT frac_grid does not match the kernel/scheme pair")
    units = c_w * w.grid_index - c_t * spike_dt
    int_part, f = units // fg, units % fg
    entry = int(lut.entries[f])
    s = int_part + (acc_frac_bits - lut.frac_bits)
    if s >= 0:
        if s > 40:  # magnitude is far past the accumulator already
            return w.sign * ACC_MAX, True
        v = entry << s
    else:
        sh = -s
        v = (entry + (1 << (sh - 1))) >> sh if sh <= 40 else 0
    if v > ACC_MAX:
        return w.sign * ACC_MAX, True
    return w.sign * v, False
