"""Conversion-aware training schedule and SGD loop.

Hidden layers walk through three activation stages: plain ReLU to get
the weights moving, a clip to [0, v_threshold] for the bulk of training,
and finally the stepped coding activation itself, entered only after the
learning rate has decayed to a fraction of its starting value.  Flipping
to the stepped stage while the rate is still high is the canonical way
to blow the run up; the schedule validator guards against it unless the
caller explicitly opts into instability experiments.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from . import nets
from .nets import Activation, Network


class TrainVariant(enum.Enum):
    """Which conversion-aware components are active during training."""

    CLIP = "clip"  # clipped hidden activations only
    CLIP_ENCODE = "clip+encode"  # plus coded network input
    FULL = "full"  # plus the stepped-activation fine-tuning stage

    @property
    def encode_input(self) -> bool:
        return self is not TrainVariant.CLIP

    @property
    def ttfs_stage(self) -> bool:
        return self is TrainVariant.FULL


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; carries where, under which activation, and
    the per-epoch trace of the completed epochs."""

    def __init__(self, epoch: int, activation: Activation, loss: float, trace=None):
        super().__init__(
            f"training diverged at epoch {epoch} (activation {activation.value}, loss {loss})"
        )
        self.epoch = epoch
        self.activation = activation
        self.loss = loss
        self.trace = trace or []


@dataclass(frozen=True)
class TrainSchedule:
    """Epoch plan; epochs are 1-based.

    relu_until is the last ReLU epoch.  The coding (step) activation
    runs for epochs strictly greater than ttfs_from, so ttfs_from ==
    total_epochs degenerates to clip-only training.  The learning rate
    divides by 10 entering each epoch listed in lr_decay_epochs.
    """

    total_epochs: int = 50
    relu_until: int = 5
    ttfs_from: int = 42
    lr0: float = 0.1
    lr_decay_epochs: Tuple[int, ...] = (20, 30, 40)
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 64
    seed: int = 0
    allow_early_ttfs: bool = False

    def validate(self):
        if not (0 < self.relu_until < self.ttfs_from <= self.total_epochs):
            raise ValueError(
                "schedule stages must satisfy 0 < relu_until < ttfs_from <= total_epochs, "
                f"got relu_until={self.relu_until} ttfs_from={self.ttfs_from} "
                f"total_epochs={self.total_epochs}"
            )
        if self.lr0 <= 0 or self.batch_size < 1 or self.total_epochs < 1:
            raise ValueError("lr0, batch_size and total_epochs must be positive")
        first_ttfs = self.ttfs_from + 1
        if first_ttfs <= self.total_epochs and not self.allow_early_ttfs:
            if self.lr_at(first_ttfs) > self.lr0 / 1000.0:
                raise ValueError(
                    "stepped-activation stage must start only after the learning rate "
                    f"has decayed to lr0/1000; at epoch {first_ttfs} it is "
                    f"{self.lr_at(first_ttfs)}. Set allow_early_ttfs for instability "
                    "experiments."
                )

    def lr_at(self, epoch: int) -> float:
        decays = sum(1 for e in self.lr_decay_epochs if epoch >= e)
        return self.lr0 / 10.0**decays

    def activation_at(self, epoch: int, variant: TrainVariant) -> Activation:
        if epoch <= self.relu_until:
            return Activation.RELU
        if variant.ttfs_stage and epoch > self.ttfs_from:
            return Activation.TTFS
        return Activation.CLIP


@dataclass
class TraceRow:
    epoch: int
    lr: float
    activation: str
    train_acc: float
    test_acc: float


@dataclass
class TrainResult:
    net: Network
    trace: List[TraceRow]
    train_acc: float
    test_acc: float


def _param_refs(net: Network):
    """(holder, attr, is_weight) triples; weight decay touches weights only."""
    refs = []
    for layer in net.layers:
        refs.append((layer, "weights", True))
        refs.append((layer, "bias", False))
        if layer.bn is not None:
            refs.append((layer.bn, "gamma", False))
            refs.append((layer.bn, "beta", False))
    return refs


def _grad_list(net: Network, grads):
    out = []
    for layer, g in zip(net.layers, grads):
        out.append(g["dw"])
        out.append(g["db"])
        if layer.bn is not None:
            out.append(g["dgamma"])
            out.append(g["dbeta"])
    return out


def train(
    net: Network,
    x_train: np.ndarray,
    y_train: np.ndarray,
    schedule: TrainSchedule,
    variant: TrainVariant = TrainVariant.FULL,
    x_test: Optional[np.ndarray] = None,
    y_test: Optional[np.ndarray] = None,
    validate_schedule: bool = True,
) -> TrainResult:
    """Minibatch SGD with momentum under the staged activation schedule.

    Deterministic for a given schedule seed: shuffling draws from one
    seeded generator and nothing else is stochastic, so two runs produce
    bit-identical weights.

    Raises:
        TrainingDiverged: on a non-finite loss, tagged with the epoch
            and the activation stage that was active.
    """
    if validate_schedule:
        schedule.validate()
    net.validate()
    rng = np.random.default_rng(schedule.seed)
    velocity = [np.zeros_like(getattr(h, a)) for h, a, _ in _param_refs(net)]
    trace: List[TraceRow] = []
    n = len(x_train)
    for epoch in range(1, schedule.total_epochs + 1):
        lr = schedule.lr_at(epoch)
        kind = schedule.activation_at(epoch, variant)
        nets.set_hidden_activation(net, kind)
        order = rng.permutation(n)
        for start in range(0, n, schedule.batch_size):
            idx = order[start : start + schedule.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            try:
                logits, caches = nets.forward(
                    net, xb, encode=variant.encode_input, training=True, want_caches=True
                )
            except FloatingPointError:
                raise TrainingDiverged(epoch, kind, float("nan"), trace) from None
            loss, dlogits = nets.softmax_cross_entropy(logits, yb)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, kind, loss, trace)
            grads = nets.backward(net, caches, dlogits)
            flat = _grad_list(net, grads)
            for v, (holder, attr, is_w), g in zip(velocity, _param_refs(net), flat):
                p = getattr(holder, attr)
                if is_w and schedule.weight_decay:
                    g = g + schedule.weight_decay * p
                v *= schedule.momentum
                v += g
                setattr(holder, attr, p - lr * v)
        try:
            train_acc = nets.accuracy(net, x_train, y_train, encode=variant.encode_input)
            test_acc = (
                nets.accuracy(net, x_test, y_test, encode=variant.encode_input)
                if x_test is not None
                else float("nan")
            )
        except FloatingPointError:
            # the last update of the epoch blew the weights up
            raise TrainingDiverged(epoch, kind, float("nan"), trace) from None
        trace.append(TraceRow(epoch, lr, kind.value, train_acc, test_acc))
    return TrainResult(net=net, trace=trace, train_acc=trace[-1].train_acc, test_acc=trace[-1].test_acc)


def fuse_batchnorm(net: Network) -> Network:
    """Fold batch-norm running statistics into weights and biases.

    Returns a new network whose inference forward matches the original
    eval-mode forward; per output unit j the weights scale by
    gamma_j / sqrt(var_j + eps) and the bias becomes
    (b_j - mean_j) * that scale + beta_j.
    """
    fused_layers = []
    for layer in net.layers:
        if layer.bn is None:
            fused_layers.append(
                replace(layer, weights=layer.weights.copy(), bias=layer.bias.copy())
            )
            continue
        bn = layer.bn
        stats = np.concatenate([np.ravel(bn.running_mean), np.ravel(bn.running_var)])
        if not np.all(np.isfinite(stats)) or np.any(bn.running_var < 0):
            raise ValueError("batch-norm running statistics are missing or invalid")
        scale = bn.gamma / np.sqrt(bn.running_var + bn.eps)
        if layer.kind == "dense":
            w = layer.weights * scale[None, :]
        else:
            w = layer.weights * scale[None, None, None, :]
        b = (layer.bias - bn.running_mean) * scale + bn.beta
        fused_layers.append(replace(layer, weights=w, bias=b, bn=None))
    fused = Network(layers=fused_layers, input_shape=net.input_shape, kernel=net.kernel)
    fused.validate()
    return fused
