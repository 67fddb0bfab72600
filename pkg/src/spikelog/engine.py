"""Event-driven execution of converted spiking networks.

Time is divided into abutting windows of `window` timesteps, one per
encoding phase: the input image is encoded in window 0, hidden layer l
fires inside the window starting at t_ref = l * window, and the output
layer only integrates, so a run over H hidden layers spans (1 + H)
windows.  Within a window every neuron spikes at most once; a spike at
offset dt decodes to kernel_value(dt).

Two execution paths share all control flow: a double-precision reference
path, and the fixed-point path whose synaptic products come from the
shift LUT and whose membrane accumulator is signed 32-bit with
acc_frac_bits fractional bits.  Saturation clamps and is counted, never
silent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from . import _core
from . import kernels as K
from .kernels import KernelParams
from .logquant import LogQuantScheme, ShiftLut, grid_unit_factors


class SpikeEvent(NamedTuple):
    neuron_id: int
    timestep: int


@dataclass(frozen=True)
class LayerPhaseWindow:
    """Encoding window of one layer; t_ref is always layer_index * window."""

    layer_index: int
    t_ref: int

    @classmethod
    def for_layer(cls, layer_index: int, window: int) -> "LayerPhaseWindow":
        return cls(layer_index=layer_index, t_ref=layer_index * window)


@dataclass
class VmemState:
    """Membrane potentials after integration.

    values is float64 on the reference path and int64 accumulator units
    on the fixed-point path; saturation_count reports clamped neurons
    and products.
    """

    values: np.ndarray
    saturation_count: int = 0


@dataclass
class SnnLayer:
    """One converted layer: grid-coded weights plus a real bias.

    Dense layers keep (in, out) code matrices; conv layers are lowered
    to a CSR synapse table whose row i lists the outgoing synapses of
    input neuron i.
    """

    kind: str
    sign: np.ndarray
    grid_index: np.ndarray
    scheme: LogQuantScheme
    bias: np.ndarray
    in_width: int
    out_width: int
    param_count: int = 0  # stored weights; CSR synapses alias conv params
    indptr: Optional[np.ndarray] = None
    indices: Optional[np.ndarray] = None
    _dense_values: Optional[np.ndarray] = field(default=None, repr=False)
    _bias_units: Optional[np.ndarray] = field(default=None, repr=False)
    _fan_outs: Optional[np.ndarray] = field(default=None, repr=False)

    def dense_values(self) -> np.ndarray:
        """Dequantized (in_width, out_width) matrix for the reference path."""
        if self._dense_values is None:
            if self.kind == "dense":
                vals = self.sign * np.exp2(self.grid_index * self.scheme.step)
            else:
                vals = np.zeros((self.in_width, self.out_width))
                syn = self.sign * np.exp2(self.grid_index * self.scheme.step)
                for i in range(self.in_width):
                    lo, hi = self.indptr[i], self.indptr[i + 1]
                    np.add.at(vals[i], self.indices[lo:hi], syn[lo:hi])
            self._dense_values = vals
        return self._dense_values

    def bias_units(self, acc_frac_bits: int) -> np.ndarray:
        if self._bias_units is None:
            scaled = self.bias * 2.0**acc_frac_bits
            self._bias_units = np.copysign(np.floor(np.abs(scaled) + 0.5), scaled).astype(np.int64)
        return self._bias_units

    def fan_outs(self) -> np.ndarray:
        """Synapse count per input neuron, for cost accounting."""
        if self._fan_outs is None:
            if self.kind == "dense":
                self._fan_outs = np.full(self.in_width, self.out_width, dtype=np.int64)
            else:
                self._fan_outs = np.diff(self.indptr).astype(np.int64)
        return self._fan_outs


@dataclass
class SnnModel:
    layers: List[SnnLayer]
    kernel: KernelParams
    lut: ShiftLut
    output_scale: float
    input_shape: Tuple[int, ...]
    acc_frac_bits: int = 16
    provenance: dict = field(default_factory=dict)

    @property
    def n_windows(self) -> int:
        return len(self.layers)  # input window + one per hidden layer

    @property
    def latency(self) -> int:
        return self.n_windows * self.kernel.window


class DuplicateSpikeError(ValueError):
    """A neuron delivered more than one spike inside one window."""


def encode_input_arrays(x: np.ndarray, k: KernelParams) -> Tuple[np.ndarray, np.ndarray]:
    """(neuron ids, window offsets) for the pixels that fire, stream-ordered."""
    dt = K.spike_times(k, np.asarray(x, dtype=np.float64).ravel())
    ids = np.nonzero(dt >= 0)[0]
    dts = dt[ids]
    order = np.lexsort((ids, dts))
    return ids[order].astype(np.int64), dts[order].astype(np.int64)


def encode_input(x: np.ndarray, k: KernelParams) -> List[SpikeEvent]:
    """Input image to sorted spike events in window 0 (t_ref = 0)."""
    ids, dts = encode_input_arrays(x, k)
    return [SpikeEvent(int(i), int(t)) for i, t in zip(ids, dts)]


def _events_to_arrays(events, window: LayerPhaseWindow, k: KernelParams):
    if isinstance(events, tuple):
        ids, dts = events
    else:
        ids = np.array([e.neuron_id for e in events], dtype=np.int64)
        dts = np.array([e.timestep for e in events], dtype=np.int64) - window.t_ref
    if len(ids) and (dts.min() < 0 or dts.max() > k.window):
        raise ValueError("spike timestep outside the layer's encoding window")
    if len(np.unique(ids)) != len(ids):
        raise DuplicateSpikeError("multiple spikes from one neuron in a single window")
    return ids, dts


def integrate_layer(
    events,
    layer: SnnLayer,
    model: SnnModel,
    window: LayerPhaseWindow,
    mode: str = "fixed",
) -> VmemState:
    """Accumulate one layer's membrane potentials from incoming spikes.

    events are the previous layer's emissions, timestamped inside
    `window`; the bias is added exactly once at the end of the phase.
    Accumulation order cannot affect the result: the reference path sums
    via a decoded-vector matmul and the fixed path sums exactly in int64
    before one clamp per neuron.
    """
    k = model.kernel
    ids, dts = _events_to_arrays(events, window, k)
    if mode == "reference":
        decoded = np.zeros((1, layer.in_width))
        if len(ids):
            decoded[0, ids] = K.kernel_table(k)[dts]
        values = (decoded @ layer.dense_values())[0] + layer.bias
        return VmemState(values=values, saturation_count=0)
    if mode != "fixed":
        raise ValueError(f"unknown mode {mode!r}")
    fg, c_w, c_t = grid_unit_factors(k, layer.scheme)
    if fg != model.lut.frac_grid:
        raise ValueError("LUT frac_grid does not match the kernel/scheme pair")
    acc = np.zeros(layer.out_width, dtype=np.int64)
    shift_base = model.acc_frac_bits - model.lut.frac_bits
    lut64 = model.lut.entries.astype(np.int64)
    if layer.kind == "dense":
        sat = _core.integrate_dense(
            ids, dts, layer.sign, layer.grid_index, lut64, fg, c_w, c_t, shift_base, acc
        )
    else:
        sat = _core.integrate_sparse(
            ids, dts, layer.indptr, layer.indices, layer.sign, layer.grid_index,
            lut64, fg, c_w, c_t, shift_base, acc,
        )
    acc += layer.bias_units(model.acc_frac_bits)
    clipped = np.clip(acc, -_core.ACC_MAX, _core.ACC_MAX)
    sat += int((clipped != acc).sum())
    return VmemState(values=clipped, saturation_count=sat)


def vmem_as_real(vmem: VmemState, model: SnnModel) -> np.ndarray:
    """Float view of membrane values on either path."""
    if vmem.values.dtype == np.int64:
        return vmem.values * 2.0**-model.acc_frac_bits
    return vmem.values


def encode_spikes(
    vmem: VmemState,
    model: SnnModel,
    window: LayerPhaseWindow,
) -> Tuple[List[SpikeEvent], int]:
    """Fire phase of one layer.

    Walks the threshold schedule dt = 0..window; every neuron whose
    potential meets the dynamic threshold emits at t_ref + dt, lowest
    neuron id first, and resets.  Negative potentials are cleared up
    front and never fire.  The emitted offsets equal spike_times applied
    to each potential independently.

    Returns the sorted events and the number of threshold steps the
    encoder advanced: the last emission offset (at least one step) when
    every live potential fired, the full window when nothing fired or
    sub-threshold residue kept the scan alive.
    """
    k = model.kernel
    u = vmem_as_real(vmem, model)
    dt = K.spike_times(k, u)
    ids = np.nonzero(dt >= 0)[0]
    dts = dt[ids]
    order = np.lexsort((ids, dts))
    events = [SpikeEvent(int(i), int(window.t_ref + t)) for i, t in zip(ids[order], dts[order])]
    steps = _encoder_steps(u, dt, k.window)
    return events, steps


def _encoder_steps(u: np.ndarray, dt: np.ndarray, window: int) -> int:
    """Threshold advances spent scanning one fire phase."""
    fired = dt >= 0
    if not fired.any() or np.any((u > 0) & ~fired):
        return window
    return max(1, int(dt[fired].max()))


@dataclass
class RunResult:
    prediction: int
    spikes: List[List[SpikeEvent]]  # input events, then one list per hidden layer
    output_vmem: VmemState
    output_values: np.ndarray
    latency: int
    encoder_steps: List[int]  # threshold advances per hidden fire phase
    saturation_count: int


def run_network(model: SnnModel, x: np.ndarray, mode: str = "fixed") -> RunResult:
    """Run one input through the network.

    The input is encoded in window 0; each hidden layer integrates its
    predecessor's window and fires in its own; the output layer only
    integrates and the prediction is the argmax of its membrane vector.
    """
    k = model.kernel
    events = encode_input(x, k)
    spikes = [events]
    encoder_steps: List[int] = []
    saturation = 0
    for li, layer in enumerate(model.layers[:-1]):
        in_window = LayerPhaseWindow.for_layer(li, k.window)
        vmem = integrate_layer(events, layer, model, in_window, mode=mode)
        saturation += vmem.saturation_count
        out_window = LayerPhaseWindow.for_layer(li + 1, k.window)
        events, steps = encode_spikes(vmem, model, out_window)
        spikes.append(events)
        encoder_steps.append(steps)
    last_window = LayerPhaseWindow.for_layer(len(model.layers) - 1, k.window)
    out_vmem = integrate_layer(events, model.layers[-1], model, last_window, mode=mode)
    saturation += out_vmem.saturation_count
    out_values = vmem_as_real(out_vmem, model)
    return RunResult(
        prediction=int(np.argmax(out_values)),
        spikes=spikes,
        output_vmem=out_vmem,
        output_values=out_values,
        latency=model.latency,
        encoder_steps=encoder_steps,
        saturation_count=saturation,
    )


@dataclass
class RunStats:
    """Per-run skeleton kept by batch evaluation for cost accounting."""

    prediction: int
    spike_ids: List[np.ndarray]  # per layer (input + hiddens)
    encoder_steps: List[int]
    saturation_count: int


def _run_arrays(model: SnnModel, x: np.ndarray, mode: str) -> RunStats:
    """run_network without event-object overhead; same semantics."""
    k = model.kernel
    ids, dts = encode_input_arrays(x, k)
    spike_ids = [ids]
    encoder_steps: List[int] = []
    saturation = 0
    events = (ids, dts)
    for li, layer in enumerate(model.layers[:-1]):
        in_window = LayerPhaseWindow.for_layer(li, k.window)
        vmem = integrate_layer(events, layer, model, in_window, mode=mode)
        saturation += vmem.saturation_count
        u = vmem_as_real(vmem, model)
        dt = K.spike_times(k, u)
        nids = np.nonzero(dt >= 0)[0].astype(np.int64)
        ndts = dt[nids]
        encoder_steps.append(_encoder_steps(u, dt, k.window))
        events = (nids, ndts)
        spike_ids.append(nids)
    last_window = LayerPhaseWindow.for_layer(len(model.layers) - 1, k.window)
    out = integrate_layer(events, model.layers[-1], model, last_window, mode=mode)
    saturation += out.saturation_count
    return RunStats(
        prediction=int(np.argmax(vmem_as_real(out, model))),
        spike_ids=spike_ids,
        encoder_steps=encoder_steps,
        saturation_count=saturation,
    )


@dataclass
class EvalResult:
    accuracy: float
    predictions: np.ndarray
    runs: List[RunStats]
    latency: int


def evaluate(model: SnnModel, x: np.ndarray, y: np.ndarray, mode: str = "fixed") -> EvalResult:
    """Accuracy plus per-run spike skeletons over a dataset."""
    runs = [_run_arrays(model, xi, mode) for xi in x]
    preds = np.array([r.prediction for r in runs])
    return EvalResult(
        accuracy=float((preds == y).mean()),
        predictions=preds,
        runs=runs,
        latency=model.latency,
    )


def model_ann_forward(model: SnnModel, x: np.ndarray) -> np.ndarray:
    """Functional float view of a converted model.

    Encodes the input, then alternates dequantized matmuls with the
    normalized coding activation (spike decode); this is what the
    reference execution path computes, expressed without events.
    """
    k = model.kernel
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    a = K.ttfs_activation(k, a) / k.v_threshold
    for layer in model.layers[:-1]:
        z = a @ layer.dense_values() + layer.bias
        a = K.ttfs_activation(k, z) / k.v_threshold
    last = model.layers[-1]
    return a @ last.dense_values() + last.bias


def trace_rows(result: RunResult) -> List[Tuple[int, int, int]]:
    """(layer, neuron_id, timestep) rows of a run, stream-ordered."""
    rows = []
    for layer_idx, events in enumerate(result.spikes):
        for e in events:
            rows.append((layer_idx, e.neuron_id, e.timestep))
    return rows
