"""Cycle, traffic, and energy accounting over spike skeletons.

Frozen numbers below are worked by hand from the counting rules: a
spike with fan-out F takes ceil(F / num_pes) array passes and F
synaptic ops, fire phases cost emissions plus threshold advances, and
weights stream once per batch when a layer fits the weight buffer.
"""

import numpy as np
import pytest

from spikelog import archmodel
from spikelog.archmodel import (
    ArchConfig,
    EnergyTable,
    RunReport,
    build_report,
    cost_encoding,
    cost_integration,
    cost_memory,
    layer_weight_bits,
    spike_record_bits,
)
from spikelog.engine import EvalResult, RunStats, SnnLayer, SnnModel
from spikelog.kernels import KernelParams
from spikelog.logquant import LogQuantScheme, build_lut, quantize_weights


def dense_model(widths, k=None):
    """Chain of dense layers with constant weights, for fan-out math."""
    k = k or KernelParams()
    layers = []
    for i in range(len(widths) - 1):
        w = np.full((widths[i], widths[i + 1]), 0.5)
        q = quantize_weights(w)
        layers.append(
            SnnLayer(kind="dense", sign=q.sign, grid_index=q.grid_index,
                     scheme=q.scheme, bias=np.zeros(widths[i + 1]),
                     in_width=widths[i], out_width=widths[i + 1],
                     param_count=w.size)
        )
    lut = build_lut(k, LogQuantScheme(fsr=0))
    return SnnModel(layers=layers, kernel=k, lut=lut, output_scale=1.0,
                    input_shape=(widths[0],))


def synthetic_eval(model, runs_spec):
    """EvalResult from (input_ids, hidden_ids_lists, steps) triples."""
    runs = []
    for input_ids, hidden_ids, steps in runs_spec:
        runs.append(RunStats(
            prediction=0,
            spike_ids=[np.asarray(input_ids, dtype=np.int64)]
            + [np.asarray(h, dtype=np.int64) for h in hidden_ids],
            encoder_steps=list(steps),
            saturation_count=0,
        ))
    return EvalResult(accuracy=1.0, predictions=np.zeros(len(runs), dtype=int),
                      runs=runs, latency=model.latency)


# -- integration cycles ---------------------------------------------------


def test_integration_full_width_spikes():
    cycles, sops, accesses = cost_integration([128] * 10, ArchConfig())
    assert (cycles, sops, accesses) == (10, 1280, 1280)


def test_integration_empty_stream():
    assert cost_integration([], ArchConfig()) == (0, 0, 0)


def test_integration_wide_fan_out_multi_pass():
    cycles, sops, _ = cost_integration([200], ArchConfig())
    assert (cycles, sops) == (2, 200)


def test_integration_scales_with_array_size():
    cycles, _, _ = cost_integration([200], ArchConfig(num_pes=50))
    assert cycles == 4


# -- encoder cycles -------------------------------------------------------


def test_encoding_emissions_plus_steps():
    assert cost_encoding(5, 3) == (8, 3)


def test_encoding_silent_layer_full_window():
    assert cost_encoding(0, 24) == (24, 24)


def test_encoding_burst_is_count_plus_one():
    assert cost_encoding(40, 1) == (41, 1)


def test_encoding_rejects_unscanned_phase():
    with pytest.raises(ValueError):
        cost_encoding(3, 0)


# -- record sizing and weight footprints ----------------------------------


def test_record_bits_from_model_shape():
    model = dense_model([30, 64, 10])  # max fan-out 64, latency 2*24=48
    assert spike_record_bits(model) == 6 + 6


def test_record_bits_overrides():
    model = dense_model([30, 64, 10])
    cfg = ArchConfig(spike_id_bits=16, spike_time_bits=8)
    assert spike_record_bits(model, cfg) == 24


def test_weight_bits_per_layer():
    model = dense_model([30, 64, 10])
    assert layer_weight_bits(model) == [30 * 64 * 5, 64 * 10 * 5]


# -- memory traffic -------------------------------------------------------


def test_weights_fitting_buffer_stream_once_per_batch():
    # 1000 synapses at 5 bits = 5000 dram bits per batch of 10
    model = dense_model([100, 10])
    counts = [[5, 3]] * 10
    dram_bits, _, _ = cost_memory(model, counts, ArchConfig(), batch_size=10)
    assert dram_bits == 5000 / 10


def test_oversized_layer_streams_every_image():
    model = dense_model([100, 10])
    tiny = ArchConfig(weight_buffer_bytes=8)  # 64 bits, far below 5000
    dram_bits, _, _ = cost_memory(model, [[5, 3]] * 10, tiny, batch_size=10)
    assert dram_bits == 5000


def test_batch_of_one_always_streams_full_weights():
    model = dense_model([100, 10])
    dram_bits, _, _ = cost_memory(model, [[5, 3]], ArchConfig(), batch_size=1)
    assert dram_bits == 5000


def test_sram_accesses_read_inputs_roundtrip_hidden():
    model = dense_model([100, 10])
    _, sram, _ = cost_memory(model, [[7, 4], [3, 0]], ArchConfig())
    assert sram == (7 + 2 * 4) + (3 + 0)


def test_spike_records_spill_only_on_overflow():
    model = dense_model([100, 50, 10])
    rec = spike_record_bits(model)
    cap_spikes = (ArchConfig().input_buffer_bytes * 8) // rec
    quiet = cost_memory(model, [[10, 10, 5]], ArchConfig())[0]
    noisy_counts = [[cap_spikes + 1, 10, 5]]
    noisy = cost_memory(model, noisy_counts, ArchConfig())[0]
    assert noisy == quiet + (cap_spikes + 1) * rec


def test_dram_energy_is_bits_times_rate():
    model = dense_model([100, 10])
    bits, _, pj = cost_memory(model, [[5, 3]], ArchConfig())
    assert pj == bits * 4.0
    bits2, _, pj2 = cost_memory(model, [[5, 3]], ArchConfig(dram_pj_per_bit=2.5))
    assert pj2 == bits2 * 2.5


def test_memory_requires_runs():
    with pytest.raises(ValueError):
        cost_memory(dense_model([4, 2]), [], ArchConfig())


# -- report assembly ------------------------------------------------------


def full_report(spike_counts=((6, 4), (8, 2)), steps=((5,), (3,))):
    model = dense_model([20, 10, 4])
    spec = [
        (list(range(c[0])), [list(range(c[1]))], list(s))
        for c, s in zip(spike_counts, steps)
    ]
    ev = synthetic_eval(model, spec)
    return model, ev, build_report(ev, model)


def test_report_cycle_decomposition():
    model, ev, report = full_report()
    # image 1: 6 input spikes fan 10 + 4 hidden fan 4 -> 10 cycles, image 2: 10
    assert report.integration_cycles == 10.0
    # fire phase: emissions + steps = (4+5 , 2+3) / 2
    assert report.encoder_cycles == 7.0
    assert report.sort_cycles == 7.0  # input spikes per image
    assert report.cycles == report.integration_cycles + report.encoder_cycles + report.sort_cycles
    assert report.fps == ArchConfig().frequency_hz / report.cycles


def test_report_sop_accounting():
    model, ev, report = full_report()
    # sops: image 1 = 6*10 + 4*4, image 2 = 8*10 + 2*4
    assert report.total_sops == (76 + 88) / 2
    assert report.total_spikes == (10 + 10) / 2
    assert report.spikes_per_layer == [7.0, 3.0]


def test_report_energy_closure_is_exact():
    _, _, report = full_report()
    assert report.energy_uj == sum(report.energy_breakdown_pj.values()) * 1e-6


def test_report_dram_component_under_default_rate():
    _, _, report = full_report()
    assert report.energy_breakdown_pj["weight_dram"] == report.weight_dram_bits * 4.0


def test_report_spike_sram_component():
    _, _, report = full_report()
    et = EnergyTable()
    # inputs read once, hidden spikes written then read back
    want = ((6 + 8) * et.sram_read_pj + (4 + 2) * (et.sram_read_pj + et.sram_write_pj)) / 2
    assert report.energy_breakdown_pj["spike_sram"] == want


def test_report_is_deterministic():
    _, _, a = full_report()
    _, _, b = full_report()
    assert a == b


def test_energy_monotone_in_spike_count():
    model = dense_model([40, 10, 4])
    energies = []
    for level in range(1, 11):
        ev = synthetic_eval(model, [(list(range(4 * level)),
                                     [list(range(4))], [6])])
        energies.append(build_report(ev, model).energy_uj)
    assert all(b >= a for a, b in zip(energies, energies[1:]))


def test_sops_linear_in_spikes_with_mean_fan_out_slope():
    model = dense_model([40, 10])
    counts = [5, 10, 20, 40]
    sops = []
    for c in counts:
        ev = synthetic_eval(model, [(list(range(c)), [], [])])
        sops.append(build_report(ev, model).total_sops)
    fan = 10  # every input neuron feeds the full next layer
    assert sops == [c * fan for c in counts]


def test_report_buffer_flag_trips_on_overflow():
    # the default 48KB buffer swallows any desk-scale window, so shrink it
    model = dense_model([40, 10])
    cfg = ArchConfig(input_buffer_bytes=16)  # 128 bits
    rec = spike_record_bits(model, cfg)
    cap_spikes = (16 * 8) // rec
    quiet = build_report(
        synthetic_eval(model, [(list(range(cap_spikes)), [], [])]), model, cfg
    )
    assert quiet.spike_buffer_ok
    loud = build_report(
        synthetic_eval(model, [(list(range(cap_spikes + 1)), [], [])]), model, cfg
    )
    assert not loud.spike_buffer_ok


def test_report_kv_lines_parse():
    _, _, report = full_report()
    kv = dict(line.split("=", 1) for line in report.as_kv())
    assert kv["images"] == "2"
    assert float(kv["sops_per_image"]) == report.total_sops
    assert float(kv["energy_uj"]) == pytest.approx(report.energy_uj, abs=1e-6)
    assert kv["spike_buffer_ok"] == "1"


def test_report_render_mentions_core_numbers():
    _, _, report = full_report()
    text = report.render()
    assert "cycles / image" in text
    assert "frames / second" in text
    assert f"{report.total_sops:.2f}" in text


def test_energy_table_rejects_negative_entries():
    with pytest.raises(ValueError):
        EnergyTable(sop_pj=-0.1)


def test_arch_config_validates():
    with pytest.raises(ValueError):
        ArchConfig(num_pes=0)
    with pytest.raises(ValueError):
        ArchConfig(frequency_hz=0)
