"""First-order cost model of the event-driven accelerator.

Counts cycles, synaptic operations, and memory traffic for runs of the
spiking pipeline on a spatial PE array, then folds them through a
per-event energy table into microjoules and a single-image frame rate.
The energy coefficients are order-of-magnitude placeholders; the cycle
and traffic formulas are the load-bearing part.

Accounting rules:
  * Integration: a spike with fan-out F occupies the array for
    ceil(F / num_pes) cycles and performs F synaptic ops; idle lanes
    are gated and cost nothing.
  * Fire phase: one cycle per emitted spike plus one per threshold
    step the encoder advanced (the engine reports the step count).
  * Input sorting: one cycle per input spike emitted by the min-find
    front end.
  * Weights stream from DRAM per layer: once per batch when the layer
    fits the weight buffer, once per inference when it does not.
  * Spike records cost SRAM accesses (hidden spikes are written then
    read back, input spikes read once) and spill to DRAM only when a
    window's records overflow the input buffer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .engine import EvalResult, SnnModel


@dataclass(frozen=True)
class EnergyTable:
    """Per-event switching energies in pJ.  Placeholder magnitudes."""

    sop_pj: float = 0.3
    sram_read_pj: float = 5.0
    sram_write_pj: float = 5.0
    encoder_step_pj: float = 2.0

    def __post_init__(self):
        for name in ("sop_pj", "sram_read_pj", "sram_write_pj", "encoder_step_pj"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class ArchConfig:
    """Array geometry, buffering, clock, and energy coefficients."""

    num_pes: int = 128
    input_buffer_bytes: int = 48 * 1024
    weight_buffer_bytes: int = 4 * 90 * 1024
    dram_pj_per_bit: float = 4.0
    energy_table: EnergyTable = field(default_factory=EnergyTable)
    frequency_hz: float = 250e6
    spike_id_bits: int = 0  # 0 = size from the model's largest fan-out
    spike_time_bits: int = 0  # 0 = size from the model's latency

    def __post_init__(self):
        if min(self.num_pes, self.input_buffer_bytes, self.weight_buffer_bytes) < 1:
            raise ValueError("array and buffer sizes must be positive")
        if self.frequency_hz <= 0 or self.dram_pj_per_bit < 0:
            raise ValueError("frequency must be positive and DRAM energy non-negative")


def cost_integration(
    fan_outs: Sequence[int], cfg: ArchConfig
) -> Tuple[int, int, int]:
    """(cycles, sops, weight-buffer accesses) to integrate one spike list.

    fan_outs holds the synapse count of each spike's source neuron; each
    spike takes ceil(fan_out / num_pes) broadcast passes.
    """
    cycles = int(sum(-(-int(f) // cfg.num_pes) for f in fan_outs))
    sops = int(sum(int(f) for f in fan_outs))
    return cycles, sops, sops


def cost_encoding(n_emitted: int, steps: int) -> Tuple[int, int]:
    """(cycles, steps) of one fire phase.

    One cycle per serialized emission plus one per threshold advance;
    the engine reports at least one step for any scanned window.
    """
    if steps < 1:
        raise ValueError("a scanned fire phase advances at least one step")
    return int(n_emitted) + int(steps), int(steps)


def spike_record_bits(model: SnnModel, cfg: ArchConfig = None) -> int:
    """Bits of one spike record: neuron id plus timestep."""
    cfg = cfg or ArchConfig()
    if cfg.spike_id_bits > 0:
        id_bits = cfg.spike_id_bits
    else:
        max_fan = max(int(l.fan_outs().max()) for l in model.layers)
        id_bits = max(1, math.ceil(math.log2(max_fan)))
    if cfg.spike_time_bits > 0:
        time_bits = cfg.spike_time_bits
    else:
        time_bits = max(1, math.ceil(math.log2(model.latency)))
    return id_bits + time_bits


def layer_weight_bits(model: SnnModel) -> List[int]:
    """Stored weight footprint per layer: one sign-and-grid code per parameter."""
    return [l.param_count * l.scheme.bit_width for l in model.layers]


def cost_memory(
    model: SnnModel,
    window_spike_counts: Sequence[Sequence[int]],
    cfg: ArchConfig,
    batch_size: int = 1,
) -> Tuple[float, int, float]:
    """(dram bits per image, sram spike accesses, dram pJ per image).

    window_spike_counts holds, per image, the spike count of every
    window (input first).  A layer's weights stream once per batch when
    they fit the weight buffer and once per image otherwise; a window's
    spike records spill to DRAM only when they overflow the input
    buffer.
    """
    n = len(window_spike_counts)
    if n == 0:
        raise ValueError("no runs to account")
    dram_bits = 0.0
    for bits in layer_weight_bits(model):
        if bits <= cfg.weight_buffer_bytes * 8 and batch_size > 1:
            dram_bits += bits / batch_size
        else:
            dram_bits += bits
    rec_bits = spike_record_bits(model, cfg)
    sram = 0
    spill = 0
    for windows in window_spike_counts:
        for wi, count in enumerate(windows):
            sram += count if wi == 0 else 2 * count
            if count * rec_bits > cfg.input_buffer_bytes * 8:
                spill += count * rec_bits
    dram_bits += spill / n
    return dram_bits, sram, dram_bits * cfg.dram_pj_per_bit


@dataclass
class RunReport:
    """Per-inference averages over an evaluated set, plus derived rates."""

    n_images: int
    accuracy: float
    latency_steps: int
    spikes_per_layer: List[float]
    total_spikes: float
    total_sops: float
    integration_cycles: float
    encoder_cycles: float
    sort_cycles: float
    cycles: float
    weight_dram_bits: float
    spike_sram_accesses: float
    record_bits: int
    energy_breakdown_pj: dict = field(default_factory=dict)
    energy_uj: float = 0.0
    fps: float = 0.0
    saturation_per_image: float = 0.0
    spike_buffer_ok: bool = True

    def as_kv(self) -> List[str]:
        rows = [
            f"images={self.n_images}",
            f"accuracy={self.accuracy:.4f}",
            f"latency_steps={self.latency_steps}",
            f"spikes_per_image={self.total_spikes:.2f}",
            f"sops_per_image={self.total_sops:.2f}",
            f"cycles_per_image={self.cycles:.2f}",
            f"integration_cycles={self.integration_cycles:.2f}",
            f"encoder_cycles={self.encoder_cycles:.2f}",
            f"sort_cycles={self.sort_cycles:.2f}",
            f"weight_dram_bits={self.weight_dram_bits:.1f}",
            f"spike_record_bits={self.record_bits}",
            f"energy_uj={self.energy_uj:.6f}",
            f"fps={self.fps:.1f}",
            f"saturation_per_image={self.saturation_per_image:.4f}",
            f"spike_buffer_ok={int(self.spike_buffer_ok)}",
        ]
        for li, s in enumerate(self.spikes_per_layer):
            rows.append(f"spikes_layer{li}={s:.2f}")
        for name, pj in sorted(self.energy_breakdown_pj.items()):
            rows.append(f"energy_{name}_pj={pj:.3f}")
        return rows

    def render(self) -> str:
        lines = ["run report", "-" * 44]
        labels = {
            "images": self.n_images,
            "accuracy": f"{self.accuracy:.4f}",
            "latency (timesteps)": self.latency_steps,
            "spikes / image": f"{self.total_spikes:.2f}",
            "sops / image": f"{self.total_sops:.2f}",
            "cycles / image": f"{self.cycles:.2f}",
            "  integration": f"{self.integration_cycles:.2f}",
            "  encoding": f"{self.encoder_cycles:.2f}",
            "  input sort": f"{self.sort_cycles:.2f}",
            "weight DRAM bits / image": f"{self.weight_dram_bits:.1f}",
            "energy / image (uJ)": f"{self.energy_uj:.6f}",
            "frames / second": f"{self.fps:.1f}",
            "saturated products / image": f"{self.saturation_per_image:.4f}",
            "spike buffer fits": "yes" if self.spike_buffer_ok else "NO",
        }
        for k, v in labels.items():
            lines.append(f"{k:<28}{v}")
        lines.append(
            "spikes by layer: " + ", ".join(f"{s:.1f}" for s in self.spikes_per_layer)
        )
        if self.energy_breakdown_pj:
            lines.append("energy breakdown (pJ): " + ", ".join(
                f"{k}={v:.1f}" for k, v in sorted(self.energy_breakdown_pj.items())))
        return "\n".join(lines)


def build_report(
    result: EvalResult,
    model: SnnModel,
    arch: ArchConfig = None,
    batch_size: int = 1,
) -> RunReport:
    """Fold an evaluation's spike skeletons through the cost model."""
    arch = arch or ArchConfig()
    n = len(result.runs)
    if n == 0:
        raise ValueError("evaluation holds no runs")
    n_layers = len(model.layers)
    fan_tables = [model.layers[li].fan_outs() for li in range(n_layers)]
    spikes_per_layer = np.zeros(n_layers)
    int_cycles = 0
    sops = 0
    enc_cycles = 0
    sort_cycles = 0
    max_window_spikes = 0
    sat = 0
    window_counts = []
    for run in result.runs:
        counts = [len(ids) for ids in run.spike_ids]
        window_counts.append(counts)
        for li, ids in enumerate(run.spike_ids):
            cyc, ops, _ = cost_integration(fan_tables[li][ids], arch)
            int_cycles += cyc
            sops += ops
            spikes_per_layer[li] += len(ids)
            max_window_spikes = max(max_window_spikes, len(ids))
        sort_cycles += counts[0]
        for li, steps in enumerate(run.encoder_steps):
            cyc, _ = cost_encoding(counts[li + 1], steps)
            enc_cycles += cyc
        sat += run.saturation_count
    spikes_per_layer /= n
    rec_bits = spike_record_bits(model, arch)
    dram_bits, sram_accesses, dram_pj = cost_memory(
        model, window_counts, arch, batch_size
    )
    cycles = (int_cycles + enc_cycles + sort_cycles) / n
    et = arch.energy_table
    input_reads = sum(c[0] for c in window_counts)
    hidden_spikes = sum(sum(c[1:]) for c in window_counts)
    breakdown = {
        "sop": sops / n * et.sop_pj,
        "encoder": enc_cycles / n * et.encoder_step_pj,
        "spike_sram": (
            input_reads * et.sram_read_pj
            + hidden_spikes * (et.sram_read_pj + et.sram_write_pj)
        ) / n,
        "weight_dram": dram_pj,
    }
    energy_pj = sum(breakdown.values())
    return RunReport(
        n_images=n,
        accuracy=result.accuracy,
        latency_steps=result.latency,
        spikes_per_layer=list(spikes_per_layer),
        total_spikes=float(spikes_per_layer.sum()),
        total_sops=sops / n,
        integration_cycles=int_cycles / n,
        encoder_cycles=enc_cycles / n,
        sort_cycles=sort_cycles / n,
        cycles=cycles,
        weight_dram_bits=dram_bits,
        spike_sram_accesses=sram_accesses / n,
        record_bits=rec_bits,
        energy_breakdown_pj=breakdown,
        energy_uj=energy_pj * 1e-6,
        fps=arch.frequency_hz / cycles if cycles else float("inf"),
        saturation_per_image=sat / n,
        spike_buffer_ok=max_window_spikes * rec_bits <= arch.input_buffer_bytes * 8,
    )
