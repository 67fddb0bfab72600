"""Turn a trained float network into a runnable spiking model.

The pipeline is: fold batch norm into the affine layers (the caller does
this via training.fuse_batchnorm), calibrate an output scale so membrane
potentials stay in decodable range, fold the firing threshold into the
weights, quantize every layer onto its own power-of-two log grid, lower
conv layers to per-neuron synapse lists, and attach the shared shift
LUT.  The resulting model's reference-path forward matches the float
network's coded forward up to weight quantization alone.
"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from . import nets
from .engine import SnnLayer, SnnModel
from .logquant import LogQuantScheme, build_lut, quantize_weights
from .nets import LayerSpec, Network


class ConversionError(ValueError):
    pass


def calibrate_output_scale(net: Network, x_calib: np.ndarray) -> float:
    """Largest output magnitude of the coded forward over the calibration set.

    Dividing the output layer by this keeps every membrane potential the
    output accumulates inside [-1, 1] on the calibration set, which both
    bounds fixed-point growth and preserves the argmax.
    """
    logits = nets.forward(net, x_calib, encode=True, training=False)
    scale = float(np.max(np.abs(logits)))
    if not np.isfinite(scale) or scale == 0.0:
        raise ConversionError("calibration produced a degenerate output scale")
    return scale


def _lower_conv(layer: LayerSpec, sign: np.ndarray, grid: np.ndarray):
    """CSR synapse lists of a conv layer, rows keyed by input neuron id.

    Neuron ids flatten channel-major, (c, y, x), matching the dense view
    used in training; zero-weight synapses are kept so the row structure
    depends only on geometry.
    """
    kh, kw, cin, cout = layer.weights.shape
    _, h, w = layer.in_shape
    _, ho, wo = layer.out_shape
    stride, pad = layer.stride, layer.padding
    indptr = np.zeros(cin * h * w + 1, dtype=np.int64)
    indices = []
    syn_sign = []
    syn_grid = []
    for ci in range(cin):
        for y in range(h):
            for x in range(w):
                for ky in range(kh):
                    yy = y + pad - ky
                    if yy % stride or not 0 <= yy // stride < ho:
                        continue
                    yo = yy // stride
                    for kx in range(kw):
                        xx = x + pad - kx
                        if xx % stride or not 0 <= xx // stride < wo:
                            continue
                        xo = xx // stride
                        base = yo * wo + xo
                        for co in range(cout):
                            indices.append(co * ho * wo + base)
                            syn_sign.append(sign[ky, kx, ci, co])
                            syn_grid.append(grid[ky, kx, ci, co])
                indptr[ci * h * w + y * w + x + 1] = len(indices)
    return (
        indptr,
        np.array(indices, dtype=np.int32),
        np.array(syn_sign, dtype=np.int8),
        np.array(syn_grid, dtype=np.int32),
    )


def _convert_layer(
    layer: LayerSpec,
    weight_scale: float,
    bias_scale: float,
    bit_width: int,
    step_exp: int,
    zero_flush: bool,
) -> SnnLayer:
    w = layer.weights * weight_scale
    if layer.kind == "dense":
        q = quantize_weights(w, bit_width=bit_width, step_exp=step_exp, zero_flush=zero_flush)
        return SnnLayer(
            kind="dense",
            sign=np.ascontiguousarray(q.sign),
            grid_index=np.ascontiguousarray(q.grid_index),
            scheme=q.scheme,
            bias=layer.bias * bias_scale,
            in_width=layer.in_width,
            out_width=layer.out_width,
            param_count=int(w.size),
        )
    q = quantize_weights(w, bit_width=bit_width, step_exp=step_exp, zero_flush=zero_flush)
    indptr, indices, sign, grid = _lower_conv(layer, q.sign, q.grid_index)
    bias = np.repeat(layer.bias * bias_scale, layer.out_shape[1] * layer.out_shape[2])
    return SnnLayer(
        kind="conv2d",
        sign=sign,
        grid_index=grid,
        scheme=q.scheme,
        bias=bias,
        in_width=layer.in_width,
        out_width=layer.out_width,
        param_count=int(w.size),
        indptr=indptr,
        indices=indices,
    )


def convert(
    net: Network,
    x_calib: np.ndarray,
    bit_width: int = 5,
    step_exp: int = 1,
    zero_flush: bool = True,
    lut_frac_bits: int = 15,
    acc_frac_bits: int = 16,
    calibration_limit: Optional[int] = None,
) -> SnnModel:
    """Trained float network to fixed-point spiking model.

    Batch norm must already be folded away.  The firing threshold is
    folded into every weight matrix so that spike decode (which divides
    by the threshold) telescopes out, and the output layer additionally
    absorbs 1/output_scale; each layer then gets its own full-scale-range
    log grid at the shared (bit_width, step_exp).
    """
    net.validate()
    for li, layer in enumerate(net.layers):
        if layer.bn is not None:
            raise ConversionError(
                f"layer {li} still carries batch norm; fold it before converting"
            )
    x_calib = np.asarray(x_calib, dtype=np.float64)
    if x_calib.ndim == 1:
        x_calib = x_calib[None, :]
    if calibration_limit is not None:
        x_calib = x_calib[:calibration_limit]
    if len(x_calib) == 0:
        raise ConversionError("calibration set is empty")
    k = net.kernel
    scale = calibrate_output_scale(net, x_calib)
    theta = k.v_threshold
    layers = []
    for li, layer in enumerate(net.layers):
        is_output = li == len(net.layers) - 1
        w_scale = theta / scale if is_output else theta
        b_scale = 1.0 / scale if is_output else 1.0
        layers.append(
            _convert_layer(layer, w_scale, b_scale, bit_width, step_exp, zero_flush)
        )
    lut = build_lut(k, LogQuantScheme(bit_width=bit_width, step_exp=step_exp, fsr=0),
                    frac_bits=lut_frac_bits)
    return SnnModel(
        layers=layers,
        kernel=k,
        lut=lut,
        output_scale=scale,
        input_shape=net.input_shape,
        acc_frac_bits=acc_frac_bits,
        provenance={
            "bit_width": bit_width,
            "step_exp": step_exp,
            "zero_flush": bool(zero_flush),
            "calibration_size": int(len(x_calib)),
        },
    )
