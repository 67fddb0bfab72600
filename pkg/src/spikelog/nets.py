"""Small dense/conv networks with hand-rolled forward and backward passes.

Activations run through the coding layer in kernels.py; the stepped
activation uses its straight-through surrogate in backward.  Tensors
between layers are kept flat (N, features) with channel-major layout for
conv shapes, matching the neuron-id convention of the event-driven
engine.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import kernels as K
from .kernels import KernelParams


class Activation(enum.Enum):
    RELU = "relu"
    CLIP = "clip"
    TTFS = "ttfs"


@dataclass
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def identity(cls, width: int) -> "BatchNorm":
        return cls(
            gamma=np.ones(width),
            beta=np.zeros(width),
            running_mean=np.zeros(width),
            running_var=np.ones(width),
        )


@dataclass
class LayerSpec:
    """One weight layer: dense or conv2d, optional batch norm, activation.

    activation is None exactly on the output layer.  Conv weights have
    shape (kh, kw, cin, cout); dense weights (in, out).
    """

    kind: str
    weights: np.ndarray
    bias: np.ndarray
    bn: Optional[BatchNorm] = None
    activation: Optional[Activation] = Activation.CLIP
    stride: int = 1
    padding: int = 0
    in_shape: Tuple[int, ...] = ()  # conv: (cin, h, w), set when the net is built

    def __post_init__(self):
        if self.kind not in ("dense", "conv2d"):
            raise ValueError(f"unknown layer kind {self.kind!r}")

    @property
    def out_shape(self) -> Tuple[int, ...]:
        if self.kind == "dense":
            return (self.weights.shape[1],)
        kh, kw, _, cout = self.weights.shape
        _, h, w = self.in_shape
        ho = (h + 2 * self.padding - kh) // self.stride + 1
        wo = (w + 2 * self.padding - kw) // self.stride + 1
        return (cout, ho, wo)

    @property
    def out_width(self) -> int:
        return int(np.prod(self.out_shape))

    @property
    def in_width(self) -> int:
        if self.kind == "dense":
            return self.weights.shape[0]
        return int(np.prod(self.in_shape))


@dataclass
class Network:
    layers: List[LayerSpec]
    input_shape: Tuple[int, ...]
    kernel: KernelParams = field(default_factory=KernelParams)

    def validate(self):
        if not self.layers:
            raise ValueError("network has no layers")
        if self.layers[-1].activation is not None:
            raise ValueError("output layer must have no activation")
        for layer in self.layers[:-1]:
            if layer.activation is None:
                raise ValueError("only the output layer may have no activation")

    @property
    def hidden(self) -> List[LayerSpec]:
        return self.layers[:-1]

    @property
    def output(self) -> LayerSpec:
        return self.layers[-1]


def set_hidden_activation(net: Network, kind: Activation):
    for layer in net.hidden:
        layer.activation = kind


def he_dense(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out))


def build_dense_net(
    input_dim: int,
    hidden: List[int],
    n_classes: int,
    kernel: KernelParams,
    bn: bool = True,
    seed: int = 0,
) -> Network:
    """Fully connected net with the given hidden widths."""
    rng = np.random.default_rng(seed)
    widths = [input_dim] + list(hidden)
    layers = []
    for i in range(len(hidden)):
        layers.append(
            LayerSpec(
                kind="dense",
                weights=he_dense(rng, widths[i], widths[i + 1]),
                bias=np.zeros(widths[i + 1]),
                bn=BatchNorm.identity(widths[i + 1]) if bn else None,
                activation=Activation.CLIP,
            )
        )
    layers.append(
        LayerSpec(
            kind="dense",
            weights=he_dense(rng, widths[-1], n_classes),
            bias=np.zeros(n_classes),
            bn=None,
            activation=None,
        )
    )
    net = Network(layers=layers, input_shape=(input_dim,), kernel=kernel)
    net.validate()
    return net


def build_conv_net(
    input_shape: Tuple[int, int, int],
    conv: List[Tuple[int, int, int]],  # (cout, ksize, stride)
    hidden: List[int],
    n_classes: int,
    kernel: KernelParams,
    bn: bool = True,
    seed: int = 0,
) -> Network:
    """Conv stack (same-ish padding ksize//2) followed by dense layers."""
    rng = np.random.default_rng(seed)
    layers: List[LayerSpec] = []
    shape = input_shape
    for cout, ksize, stride in conv:
        cin = shape[0]
        fan_in = ksize * ksize * cin
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), (ksize, ksize, cin, cout))
        layer = LayerSpec(
            kind="conv2d",
            weights=w,
            bias=np.zeros(cout),
            bn=BatchNorm.identity(cout) if bn else None,
            activation=Activation.CLIP,
            stride=stride,
            padding=ksize // 2,
            in_shape=shape,
        )
        layers.append(layer)
        shape = layer.out_shape
    width = int(np.prod(shape))
    dims = [width] + list(hidden)
    for i in range(len(hidden)):
        layers.append(
            LayerSpec(
                kind="dense",
                weights=he_dense(rng, dims[i], dims[i + 1]),
                bias=np.zeros(dims[i + 1]),
                bn=BatchNorm.identity(dims[i + 1]) if bn else None,
                activation=Activation.CLIP,
            )
        )
    layers.append(
        LayerSpec(
            kind="dense",
            weights=he_dense(rng, dims[-1], n_classes),
            bias=np.zeros(n_classes),
            activation=None,
        )
    )
    net = Network(layers=layers, input_shape=input_shape, kernel=kernel)
    net.validate()
    return net


# ---------------------------------------------------------------------------
# conv plumbing


def _im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(n, c * kh * kw, ho * wo), (ho, wo)


def _col2im(dcols, xshape, kh, kw, stride, pad, ho, wo):
    n, c, h, w = xshape
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    dcols = dcols.reshape(n, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, :, i, j]
    return dxp[:, :, pad : pad + h, pad : pad + w]


def _conv_weight_matrix(w):
    # (kh, kw, cin, cout) -> (cin*kh*kw, cout) matching im2col's (c, kh, kw) layout
    kh, kw, cin, cout = w.shape
    return w.transpose(2, 0, 1, 3).reshape(cin * kh * kw, cout)


# ---------------------------------------------------------------------------
# forward / backward


def _linear_forward(layer: LayerSpec, x: np.ndarray):
    if layer.kind == "dense":
        z = x @ layer.weights + layer.bias
        return z, {"x": x}
    n = x.shape[0]
    xs = x.reshape((n,) + layer.in_shape)
    kh, kw, _, cout = layer.weights.shape
    cols, (ho, wo) = _im2col(xs, kh, kw, layer.stride, layer.padding)
    wmat = _conv_weight_matrix(layer.weights)
    z = cols.transpose(0, 2, 1) @ wmat + layer.bias  # (n, ho*wo, cout)
    z = z.transpose(0, 2, 1).reshape(n, cout * ho * wo)
    return z, {"x": x, "cols": cols, "hw": (ho, wo)}


def _linear_backward(layer: LayerSpec, cache: dict, dz: np.ndarray):
    if layer.kind == "dense":
        dw = cache["x"].T @ dz
        db = dz.sum(axis=0)
        dx = dz @ layer.weights.T
        return dw, db, dx
    n = dz.shape[0]
    kh, kw, cin, cout = layer.weights.shape
    ho, wo = cache["hw"]
    dzs = dz.reshape(n, cout, ho * wo).transpose(0, 2, 1)  # (n, ho*wo, cout)
    wmat = _conv_weight_matrix(layer.weights)
    dwmat = np.einsum("nfp,npc->fc", cache["cols"], dzs)
    dw = dwmat.reshape(cin, kh, kw, cout).transpose(1, 2, 0, 3)
    db = dzs.sum(axis=(0, 1))
    dcols = dzs @ wmat.T  # (n, ho*wo, cin*kh*kw)
    dx = _col2im(
        dcols.transpose(0, 2, 1), (n,) + layer.in_shape, kh, kw, layer.stride, layer.padding, ho, wo
    )
    return dw, db, dx.reshape(n, -1)


def _bn_axes(layer: LayerSpec, z: np.ndarray):
    """View z as (N*, channels) for per-channel statistics."""
    if layer.kind == "dense":
        return z, z.shape
    n = z.shape[0]
    cout, ho, wo = layer.out_shape
    return z.reshape(n, cout, ho * wo).transpose(0, 2, 1).reshape(n * ho * wo, cout), z.shape


def _bn_restore(layer: LayerSpec, z2: np.ndarray, orig_shape):
    if layer.kind == "dense":
        return z2
    n = orig_shape[0]
    cout, ho, wo = layer.out_shape
    return z2.reshape(n, ho * wo, cout).transpose(0, 2, 1).reshape(orig_shape)


def _bn_forward(layer: LayerSpec, z: np.ndarray, training: bool):
    bn = layer.bn
    z2, shape = _bn_axes(layer, z)
    if training:
        mu = z2.mean(axis=0)
        var = z2.var(axis=0)
        m = z2.shape[0]
        bn.running_mean = (1 - bn.momentum) * bn.running_mean + bn.momentum * mu
        bn.running_var = (1 - bn.momentum) * bn.running_var + bn.momentum * var
    else:
        mu, var, m = bn.running_mean, bn.running_var, z2.shape[0]
    inv = 1.0 / np.sqrt(var + bn.eps)
    zhat = (z2 - mu) * inv
    out2 = bn.gamma * zhat + bn.beta
    cache = {"zhat": zhat, "inv": inv, "m": m, "shape": shape, "training": training}
    return _bn_restore(layer, out2, shape), cache


def _bn_backward(layer: LayerSpec, cache: dict, dout: np.ndarray):
    bn = layer.bn
    dout2, _ = _bn_axes(layer, dout)
    zhat, inv, m = cache["zhat"], cache["inv"], cache["m"]
    dgamma = (dout2 * zhat).sum(axis=0)
    dbeta = dout2.sum(axis=0)
    dzhat = dout2 * bn.gamma
    if cache["training"]:
        dz2 = inv * (dzhat - dzhat.mean(axis=0) - zhat * (dzhat * zhat).mean(axis=0))
    else:
        dz2 = dzhat * inv  # running stats are constants in eval mode
    return _bn_restore(layer, dz2, cache["shape"]), dgamma, dbeta


def _activation_forward(net: Network, layer: LayerSpec, z: np.ndarray, relax: bool = False):
    kind = layer.activation
    if kind is None:
        return z
    if kind is Activation.RELU:
        return np.maximum(z, 0.0)
    if kind is Activation.CLIP:
        return K.clip_activation(net.kernel.v_threshold, z)
    if relax:
        # piecewise-linear stand-in for the step activation; its exact
        # derivative is the straight-through surrogate mask, which is
        # what gradient checks difference against
        return K.ttfs_relaxation(net.kernel, z)
    return K.ttfs_activation(net.kernel, z)


def _activation_grad(net: Network, layer: LayerSpec, z: np.ndarray):
    kind = layer.activation
    if kind is None:
        return np.ones_like(z)
    if kind is Activation.RELU:
        return (z > 0.0).astype(np.float64)
    if kind is Activation.CLIP:
        return K.clip_activation_grad(net.kernel.v_threshold, z)
    return K.ttfs_activation_grad(net.kernel, z)


def forward(
    net: Network,
    x: np.ndarray,
    encode: bool = False,
    training: bool = False,
    want_caches: bool = False,
    relax: bool = False,
):
    """Run the network; x is (N, features) scaled into [0, v_threshold].

    Args:
        encode: pass the input through ttfs_activation first (the
            input-coding training component).
        training: batch-norm uses batch statistics and updates running
            stats.
        want_caches: also return per-layer caches for backward.
        relax: replace the step activation by its piecewise-linear
            relaxation (finite-difference gradient checks only).

    Raises:
        FloatingPointError: when any pre-activation goes non-finite,
            reported with the layer index.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if encode:
        x = K.ttfs_activation(net.kernel, x)
    caches = []
    a = x
    for li, layer in enumerate(net.layers):
        z, lin_cache = _linear_forward(layer, a)
        bn_cache = None
        if layer.bn is not None:
            z, bn_cache = _bn_forward(layer, z, training)
        if not np.all(np.isfinite(z)):
            raise FloatingPointError(f"non-finite pre-activation in layer {li}")
        out = _activation_forward(net, layer, z, relax=relax)
        caches.append({"lin": lin_cache, "bn": bn_cache, "z": z, "a_in": a})
        a = out
    if want_caches:
        return a, caches
    return a


def backward(net: Network, caches, dlogits: np.ndarray):
    """Gradients for every layer given d(loss)/d(logits).

    Returns a list of dicts with dw, db and, when the layer has bn,
    dgamma/dbeta, ordered like net.layers.
    """
    grads = [None] * len(net.layers)
    da = dlogits
    for li in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[li]
        cache = caches[li]
        dz = da * _activation_grad(net, layer, cache["z"])
        g = {}
        if layer.bn is not None:
            dz, g["dgamma"], g["dbeta"] = _bn_backward(layer, cache["bn"], dz)
        g["dw"], g["db"], da = _linear_backward(layer, cache["lin"], dz)
        grads[li] = g
    return grads


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross entropy and d(loss)/d(logits)."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    nll = -np.log(np.clip(probs[np.arange(n), labels], 1e-300, None))
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    return float(nll.mean()), dlogits / n


def accuracy(net: Network, x: np.ndarray, y: np.ndarray, encode: bool = False) -> float:
    logits = forward(net, x, encode=encode, training=False)
    return float((logits.argmax(axis=1) == y).mean())
