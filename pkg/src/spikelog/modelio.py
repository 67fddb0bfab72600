"""Binary container for trained and converted models.

One frame serves both pipeline stages: 4-byte magic, u16 version,
u32 header length, canonical-JSON header, array blobs in header order,
and a trailing crc32 over everything after the magic.  Multi-byte
fields are little-endian and blobs use fixed dtypes, so
save(load(p)) == p byte for byte.

The header's stage tag ("ann" or "snn") says which phase produced the
file; loaders reject the wrong stage so a float checkpoint cannot be
executed and a converted model cannot be converted again.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .engine import SnnLayer, SnnModel
from .kernels import KernelBase, KernelParams
from .logquant import LogQuantScheme, ShiftLut
from .nets import Activation, BatchNorm, LayerSpec, Network

_MAGIC = b"SPKL"
_VERSION = 1
STAGE_ANN = "ann"
STAGE_SNN = "snn"


def _frame(header: dict, blobs: List[bytes]) -> bytes:
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    payload = struct.pack("<HI", _VERSION, len(head)) + head + b"".join(blobs)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    return _MAGIC + payload + struct.pack("<I", crc)


def _unframe(raw: bytes) -> Tuple[dict, bytes]:
    if len(raw) < 14 or raw[:4] != _MAGIC:
        raise ValueError("not a model container")
    payload, (crc,) = raw[4:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ValueError("model container checksum mismatch")
    version, head_len = struct.unpack_from("<HI", payload)
    if version != _VERSION:
        raise ValueError(f"unsupported model container version {version}")
    off = struct.calcsize("<HI")
    if off + head_len > len(payload):
        raise ValueError("container truncated")
    header = json.loads(payload[off:off + head_len])
    return header, payload[off + head_len:]


def container_stage(path) -> str:
    header, _ = _unframe(Path(path).read_bytes())
    return header.get("stage", "?")


class _BlobReader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.off = 0

    def take(self, dtype, count, shape=None) -> np.ndarray:
        n = int(np.dtype(dtype).itemsize) * int(count)
        if self.off + n > len(self.buf):
            raise ValueError("container truncated")
        arr = np.frombuffer(self.buf, dtype=dtype, count=count, offset=self.off).copy()
        self.off += n
        return arr.reshape(shape) if shape is not None else arr

    def done(self):
        if self.off != len(self.buf):
            raise ValueError("container holds trailing bytes")


def _kernel_header(k: KernelParams) -> dict:
    return {
        "window": k.window,
        "tau": k.tau,
        "v_threshold": k.v_threshold,
        "base": k.base.name.lower(),
    }


def _kernel_from_header(kh: dict) -> KernelParams:
    if kh["base"] != "pow2":
        raise ValueError("only power-of-two kernels are stored in containers")
    return KernelParams(
        window=kh["window"], tau=kh["tau"], v_threshold=kh["v_threshold"],
        base=KernelBase.POW2,
    )


# -- trained float networks (stage "ann") --------------------------------


def network_bytes(net: Network, provenance: Optional[dict] = None) -> bytes:
    layer_heads = []
    blobs: List[bytes] = []
    for layer in net.layers:
        head = {
            "kind": layer.kind,
            "wshape": list(layer.weights.shape),
            "stride": layer.stride,
            "padding": layer.padding,
            "in_shape": list(layer.in_shape) if layer.in_shape else None,
            "activation": layer.activation.value if layer.activation else None,
            "bn": layer.bn is not None,
        }
        blobs.append(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
        blobs.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
        if layer.bn is not None:
            head["bn_eps"] = layer.bn.eps
            head["bn_momentum"] = layer.bn.momentum
            for arr in (layer.bn.gamma, layer.bn.beta,
                        layer.bn.running_mean, layer.bn.running_var):
                blobs.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        layer_heads.append(head)
    header = {
        "stage": STAGE_ANN,
        "kernel": _kernel_header(net.kernel),
        "input_shape": list(net.input_shape),
        "layers": layer_heads,
        "provenance": provenance or {},
    }
    return _frame(header, blobs)


def save_network(net: Network, path, provenance: Optional[dict] = None) -> None:
    Path(path).write_bytes(network_bytes(net, provenance))


def network_from_bytes(raw: bytes) -> Tuple[Network, dict]:
    header, blob = _unframe(raw)
    if header.get("stage") != STAGE_ANN:
        raise ValueError(
            f"expected a trained float model, found stage {header.get('stage')!r}"
        )
    rd = _BlobReader(blob)
    layers = []
    for lh in header["layers"]:
        wshape = tuple(lh["wshape"])
        weights = rd.take("<f8", int(np.prod(wshape)), wshape)
        n_out = wshape[-1]
        bias = rd.take("<f8", n_out)
        bn = None
        if lh["bn"]:
            gamma = rd.take("<f8", n_out)
            beta = rd.take("<f8", n_out)
            mean = rd.take("<f8", n_out)
            var = rd.take("<f8", n_out)
            bn = BatchNorm(gamma=gamma, beta=beta, running_mean=mean,
                           running_var=var, eps=lh["bn_eps"],
                           momentum=lh["bn_momentum"])
        layers.append(LayerSpec(
            kind=lh["kind"],
            weights=weights,
            bias=bias,
            bn=bn,
            activation=Activation(lh["activation"]) if lh["activation"] else None,
            stride=lh["stride"],
            padding=lh["padding"],
            in_shape=tuple(lh["in_shape"]) if lh["in_shape"] else (),
        ))
    rd.done()
    net = Network(
        layers=layers,
        input_shape=tuple(header["input_shape"]),
        kernel=_kernel_from_header(header["kernel"]),
    )
    net.validate()
    return net, header.get("provenance", {})


def load_network(path) -> Tuple[Network, dict]:
    return network_from_bytes(Path(path).read_bytes())


# -- converted models (stage "snn") --------------------------------------


def model_bytes(model: SnnModel) -> bytes:
    layer_heads = []
    blobs = [np.ascontiguousarray(model.lut.entries, dtype="<u2").tobytes()]
    for layer in model.layers:
        head = {
            "kind": layer.kind,
            "in_width": layer.in_width,
            "out_width": layer.out_width,
            "param_count": layer.param_count,
            "scheme": {
                "bit_width": layer.scheme.bit_width,
                "step_exp": layer.scheme.step_exp,
                "fsr": layer.scheme.fsr,
            },
            "nnz": int(layer.sign.size),
        }
        blobs.append(np.ascontiguousarray(layer.sign, dtype=np.int8).tobytes())
        blobs.append(np.ascontiguousarray(layer.grid_index, dtype="<i4").tobytes())
        blobs.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
        if layer.kind == "conv2d":
            head["indptr_len"] = int(layer.indptr.size)
            blobs.append(np.ascontiguousarray(layer.indptr, dtype="<i8").tobytes())
            blobs.append(np.ascontiguousarray(layer.indices, dtype="<i4").tobytes())
        layer_heads.append(head)
    header = {
        "stage": STAGE_SNN,
        "kernel": _kernel_header(model.kernel),
        "acc_frac_bits": model.acc_frac_bits,
        "output_scale": model.output_scale,
        "input_shape": list(model.input_shape),
        "lut": {
            "frac_grid": model.lut.frac_grid,
            "frac_bits": model.lut.frac_bits,
            "entries": int(model.lut.entries.size),
        },
        "layers": layer_heads,
        "provenance": model.provenance,
    }
    return _frame(header, blobs)


def save_model(model: SnnModel, path) -> None:
    Path(path).write_bytes(model_bytes(model))


def model_from_bytes(raw: bytes) -> SnnModel:
    header, blob = _unframe(raw)
    if header.get("stage") != STAGE_SNN:
        raise ValueError(
            f"expected a converted model, found stage {header.get('stage')!r}"
        )
    kernel = _kernel_from_header(header["kernel"])
    rd = _BlobReader(blob)
    lut = ShiftLut(
        frac_grid=header["lut"]["frac_grid"],
        entries=rd.take("<u2", header["lut"]["entries"]),
        frac_bits=header["lut"]["frac_bits"],
    )
    layers = []
    for lh in header["layers"]:
        nnz = lh["nnz"]
        scheme = LogQuantScheme(**lh["scheme"])
        if lh["kind"] == "conv2d":
            sign = rd.take(np.int8, nnz)
            grid = rd.take("<i4", nnz)
            bias = rd.take("<f8", lh["out_width"])
            indptr = rd.take("<i8", lh["indptr_len"])
            indices = rd.take("<i4", nnz)
        else:
            shape = (lh["in_width"], lh["out_width"])
            sign = rd.take(np.int8, nnz, shape)
            grid = rd.take("<i4", nnz, shape)
            bias = rd.take("<f8", lh["out_width"])
            indptr = indices = None
        layers.append(SnnLayer(
            kind=lh["kind"], sign=sign, grid_index=grid, scheme=scheme,
            bias=bias, in_width=lh["in_width"], out_width=lh["out_width"],
            param_count=lh["param_count"], indptr=indptr, indices=indices,
        ))
    rd.done()
    return SnnModel(
        layers=layers,
        kernel=kernel,
        lut=lut,
        output_scale=header["output_scale"],
        input_shape=tuple(header["input_shape"]),
        acc_frac_bits=header["acc_frac_bits"],
        provenance=header.get("provenance", {}),
    )


def load_model(path) -> SnnModel:
    return model_from_bytes(Path(path).read_bytes())
