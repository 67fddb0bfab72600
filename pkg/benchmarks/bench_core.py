"""Timing comparison of the compiled integration core vs the numpy fallback.

Exercises the dense and CSR synaptic-integration kernels on synthetic
spike batches under both backends, checks bit-equality of accumulators
and saturation counts first, then reports per-call wall time and the
speedup.  A whole-model pass times evaluate() end to end with each
backend patched in.

    python benchmarks/bench_core.py [--repeats N] [--images N]
"""

import argparse
import time

import numpy as np

from spikelog import _core
from spikelog._core import available_backends, get_backend
from spikelog.conversion import convert
from spikelog.engine import evaluate
from spikelog.kernels import KernelParams
from spikelog.logquant import LogQuantScheme, build_lut, grid_unit_factors
from spikelog.nets import Activation, LayerSpec, Network


def _dense_case(rng, n_in, n_out, n_spikes, k, scheme, lut):
    ids = np.sort(rng.choice(n_in, size=n_spikes, replace=False)).astype(np.int64)
    dts = rng.integers(0, k.window + 1, n_spikes)
    sign = rng.choice(np.array([-1, 0, 1], dtype=np.int8), size=(n_in, n_out))
    grid = rng.integers(scheme.grid_min, scheme.fsr + 1, size=(n_in, n_out), dtype=np.int32)
    fg, c_w, c_t = grid_unit_factors(k, scheme)
    lut64 = lut.entries.astype(np.int64)
    shift_base = 16 - lut.frac_bits
    args = (ids, dts, sign, grid, lut64, fg, c_w, c_t, shift_base)
    return args, n_out


def _sparse_case(rng, n_in, n_out, fan_out, n_spikes, k, scheme, lut):
    ids = np.sort(rng.choice(n_in, size=n_spikes, replace=False)).astype(np.int64)
    dts = rng.integers(0, k.window + 1, n_spikes)
    indptr = np.arange(n_in + 1, dtype=np.int64) * fan_out
    indices = rng.integers(0, n_out, n_in * fan_out).astype(np.int32)
    sign = rng.choice(np.array([-1, 0, 1], dtype=np.int8), size=n_in * fan_out)
    grid = rng.integers(scheme.grid_min, scheme.fsr + 1, size=n_in * fan_out, dtype=np.int32)
    fg, c_w, c_t = grid_unit_factors(k, scheme)
    lut64 = lut.entries.astype(np.int64)
    shift_base = 16 - lut.frac_bits
    args = (ids, dts, indptr, indices, sign, grid, lut64, fg, c_w, c_t, shift_base)
    return args, n_out


def _time_kernel(fn, args, n_out, repeats):
    acc = np.zeros(n_out, dtype=np.int64)
    fn(*args, acc)  # warm up
    best = np.inf
    for _ in range(repeats):
        acc[:] = 0
        t0 = time.perf_counter()
        fn(*args, acc)
        best = min(best, time.perf_counter() - t0)
    return best, acc


def bench_kernels(backends, repeats):
    k = KernelParams()
    scheme = LogQuantScheme(fsr=0)
    lut = build_lut(k, scheme, frac_bits=15)
    rng = np.random.default_rng(0)
    cases = [
        ("dense 256x256, 192 spikes", "integrate_dense",
         _dense_case(rng, 256, 256, 192, k, scheme, lut)),
        ("dense 1024x512, 768 spikes", "integrate_dense",
         _dense_case(rng, 1024, 512, 768, k, scheme, lut)),
        ("csr 1024 rows, fan-out 32, 768 spikes", "integrate_sparse",
         _sparse_case(rng, 1024, 512, 32, 768, k, scheme, lut)),
    ]
    for label, fn_name, (args, n_out) in cases:
        times = {}
        accs = {}
        for name, mod in backends.items():
            times[name], accs[name] = _time_kernel(getattr(mod, fn_name), args, n_out, repeats)
        names = list(backends)
        if len(names) == 2:
            a, b = names
            assert np.array_equal(accs[a], accs[b]), f"backend mismatch on {label}"
        line = "  ".join(f"{n}: {times[n] * 1e6:8.1f} us" for n in names)
        if len(names) == 2 and times[names[0]] > 0:
            line += f"  speedup: {times[names[1]] / times[names[0]]:.1f}x"
        print(f"{label:<40}{line}")


def _bench_model(backends, n_images):
    # a mid-sized dense stack, grid-exact so conversion is mechanical
    rng = np.random.default_rng(1)
    dims = [64, 128, 128, 10]
    layers = []
    for i in range(len(dims) - 1):
        idx = rng.integers(-6, 1, (dims[i], dims[i + 1]))
        sign = rng.choice([-1.0, 1.0], (dims[i], dims[i + 1]))
        layers.append(LayerSpec(
            kind="dense", weights=sign * np.exp2(idx * 0.5),
            bias=rng.normal(0, 0.05, dims[i + 1]),
            activation=None if i == len(dims) - 2 else Activation.TTFS,
        ))
    net = Network(layers=layers, input_shape=(dims[0],), kernel=KernelParams())
    x = rng.uniform(0, 1, (n_images, dims[0]))
    y = rng.integers(0, dims[-1], n_images)
    model = convert(net, x[:32])
    saved = (_core.integrate_dense, _core.integrate_sparse)
    try:
        for name, mod in backends.items():
            _core.integrate_dense = mod.integrate_dense
            _core.integrate_sparse = mod.integrate_sparse
            t0 = time.perf_counter()
            evaluate(model, x, y, mode="fixed")
            dt = time.perf_counter() - t0
            print(f"model {dims}, {n_images} images ({name}): "
                  f"{dt:.3f}s  ({dt / n_images * 1e3:.2f} ms/image)")
    finally:
        _core.integrate_dense, _core.integrate_sparse = saved


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=200, help="timing repeats per kernel")
    ap.add_argument("--images", type=int, default=256, help="images for the model pass")
    args = ap.parse_args()

    names = available_backends()
    print(f"available backends: {', '.join(names)} (active: {_core.BACKEND})")
    backends = {name: get_backend(name) for name in names}
    if len(backends) < 2:
        print("compiled core not built; timing the fallback alone")
    bench_kernels(backends, args.repeats)
    _bench_model(backends, args.images)


if __name__ == "__main__":
    main()
