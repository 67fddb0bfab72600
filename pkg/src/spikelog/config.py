"""Experiment configuration: one JSON document drives every command.

The document mirrors the package's operating point: kernel {T, tau,
theta0}, quant {bw, z_w, zero_flush, ...}, the training schedule, the
model topology, the dataset source, and the hardware model.  Defaults
reproduce the reference operating point (T=24, tau=4, theta0=1, bw=5,
half-octave weight grid).  Unknown keys anywhere in the document are
rejected in one error that lists every offending key, so a typo cannot
silently fall back to a default.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .archmodel import ArchConfig, EnergyTable
from .datasets import Dataset, import_csv, load_dataset, train_test_blobs
from .kernels import KernelParams
from .nets import Network, build_conv_net, build_dense_net
from .training import TrainSchedule, TrainVariant

CONFIG_DIR_ENV = "SPIKELOG_CONFIG_DIR"

_DEFAULTS = {
    "seed": 0,
    "kernel": {"T": 24, "tau": 4, "theta0": 1.0},
    "quant": {
        "bw": 5,
        "z_w": 1,
        "zero_flush": True,
        "lut_frac_bits": 15,
        "acc_frac_bits": 16,
    },
    "schedule": {
        "total_epochs": 50,
        "relu_until": 5,
        "ttfs_from": 42,
        "lr0": 0.1,
        "lr_decay_epochs": [20, 30, 40],
        "momentum": 0.9,
        "weight_decay": 5e-4,
        "batch_size": 64,
        "allow_early_ttfs": False,
        "variant": "full",
    },
    "model": {"hidden": [24, 16], "conv": [], "bn": True},
    "dataset": {
        "path": "synth:blobs",
        "test_path": None,
        "train_samples": 512,
        "test_samples": 256,
        "features": 16,
        "classes": 4,
        "spread": 0.18,
        "shape": None,
        "calibration_limit": None,
    },
    "arch": {
        "num_pes": 128,
        "input_buffer_bytes": 48 * 1024,
        "weight_buffer_bytes": 4 * 90 * 1024,
        "dram_pj_per_bit": 4.0,
        "frequency_hz": 250e6,
        "spike_id_bits": 0,
        "spike_time_bits": 0,
        "energy_table": {
            "sop_pj": 0.3,
            "sram_read_pj": 5.0,
            "sram_write_pj": 5.0,
            "encoder_step_pj": 2.0,
        },
    },
}


class ConfigError(ValueError):
    pass


def _merge(defaults, overrides, prefix, unknown):
    merged = {}
    for key, default in defaults.items():
        if key in overrides and isinstance(default, dict) and isinstance(overrides[key], dict):
            merged[key] = _merge(default, overrides[key], f"{prefix}{key}.", unknown)
        elif key in overrides:
            merged[key] = overrides[key]
        else:
            merged[key] = default
    for key in overrides:
        if key not in defaults:
            unknown.append(f"{prefix}{key}")
    return merged


def default_config_dict() -> dict:
    return json.loads(json.dumps(_DEFAULTS))


@dataclass
class ExperimentConfig:
    """Typed view of one merged configuration document."""

    seed: int
    kernel: KernelParams
    bit_width: int
    step_exp: int
    zero_flush: bool
    lut_frac_bits: int
    acc_frac_bits: int
    schedule: TrainSchedule
    variant: TrainVariant
    hidden: List[int]
    conv: List[Tuple[int, int, int]]
    bn: bool
    dataset: dict
    arch: ArchConfig
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("configuration document must be a JSON object")
        unknown: List[str] = []
        merged = _merge(_DEFAULTS, doc, "", unknown)
        if unknown:
            raise ConfigError(
                "unknown configuration keys: " + ", ".join(sorted(unknown))
            )
        kernel = KernelParams(
            window=int(merged["kernel"]["T"]),
            tau=int(merged["kernel"]["tau"]),
            v_threshold=float(merged["kernel"]["theta0"]),
        )
        sch = merged["schedule"]
        try:
            variant = TrainVariant(sch["variant"])
        except ValueError:
            raise ConfigError(
                f"schedule.variant must be one of "
                f"{[v.value for v in TrainVariant]}, got {sch['variant']!r}"
            ) from None
        schedule = TrainSchedule(
            total_epochs=int(sch["total_epochs"]),
            relu_until=int(sch["relu_until"]),
            ttfs_from=int(sch["ttfs_from"]),
            lr0=float(sch["lr0"]),
            lr_decay_epochs=tuple(int(e) for e in sch["lr_decay_epochs"]),
            momentum=float(sch["momentum"]),
            weight_decay=float(sch["weight_decay"]),
            batch_size=int(sch["batch_size"]),
            seed=int(merged["seed"]),
            allow_early_ttfs=bool(sch["allow_early_ttfs"]),
        )
        q = merged["quant"]
        a = merged["arch"]
        arch = ArchConfig(
            num_pes=int(a["num_pes"]),
            input_buffer_bytes=int(a["input_buffer_bytes"]),
            weight_buffer_bytes=int(a["weight_buffer_bytes"]),
            dram_pj_per_bit=float(a["dram_pj_per_bit"]),
            frequency_hz=float(a["frequency_hz"]),
            spike_id_bits=int(a["spike_id_bits"]),
            spike_time_bits=int(a["spike_time_bits"]),
            energy_table=EnergyTable(**{
                k: float(v) for k, v in a["energy_table"].items()
            }),
        )
        m = merged["model"]
        return cls(
            seed=int(merged["seed"]),
            kernel=kernel,
            bit_width=int(q["bw"]),
            step_exp=int(q["z_w"]),
            zero_flush=bool(q["zero_flush"]),
            lut_frac_bits=int(q["lut_frac_bits"]),
            acc_frac_bits=int(q["acc_frac_bits"]),
            schedule=schedule,
            variant=variant,
            hidden=[int(h) for h in m["hidden"]],
            conv=[tuple(int(v) for v in c) for c in m["conv"]],
            bn=bool(m["bn"]),
            dataset=merged["dataset"],
            arch=arch,
            raw=merged,
        )

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        return cls.from_dict(doc)

    @classmethod
    def default(cls) -> "ExperimentConfig":
        return cls.from_dict({})

    def with_seed(self, seed: int) -> "ExperimentConfig":
        doc = json.loads(json.dumps(self.raw))
        doc["seed"] = int(seed)
        return ExperimentConfig.from_dict(doc)


def resolve_config_path(name: Optional[str]) -> Optional[Path]:
    """Turn a --config argument into a file path.

    A value naming an existing file wins; otherwise the name is looked
    up inside $SPIKELOG_CONFIG_DIR.  None means defaults.
    """
    if name is None:
        return None
    p = Path(name)
    if p.is_file():
        return p
    cfg_dir = os.environ.get(CONFIG_DIR_ENV)
    if cfg_dir:
        candidate = Path(cfg_dir) / name
        if candidate.is_file():
            return candidate
        candidate = Path(cfg_dir) / f"{name}.json"
        if candidate.is_file():
            return candidate
    raise ConfigError(f"configuration {name!r} not found (set ${CONFIG_DIR_ENV}?)")


def load_config(name: Optional[str], seed: Optional[int] = None) -> ExperimentConfig:
    path = resolve_config_path(name)
    cfg = ExperimentConfig.from_file(path) if path else ExperimentConfig.default()
    if seed is not None:
        cfg = cfg.with_seed(seed)
    return cfg


def resolve_dataset(cfg: ExperimentConfig) -> Tuple[Dataset, Dataset]:
    """(train, test) pair named by the config's dataset section."""
    ds = cfg.dataset
    path = ds["path"]
    if path == "synth:blobs":
        return train_test_blobs(
            n_train=int(ds["train_samples"]),
            n_test=int(ds["test_samples"]),
            n_features=int(ds["features"]),
            n_classes=int(ds["classes"]),
            spread=float(ds["spread"]),
            seed=cfg.seed,
        )
    train = _load_any(path)
    if ds["test_path"]:
        return train, _load_any(ds["test_path"])
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(len(train))
    cut = max(1, int(0.8 * len(train)))
    return (
        Dataset(train.x[perm[:cut]], train.y[perm[:cut]],
                train.n_classes, train.feature_shape),
        Dataset(train.x[perm[cut:]], train.y[perm[cut:]],
                train.n_classes, train.feature_shape),
    )


def _load_any(path) -> Dataset:
    if str(path).endswith(".csv"):
        return import_csv(path)
    return load_dataset(path)


def build_network(cfg: ExperimentConfig, train: Dataset) -> Network:
    """Network named by the config, sized to the dataset."""
    if cfg.conv:
        shape = cfg.dataset.get("shape") or train.feature_shape
        if len(shape) != 3:
            raise ConfigError(
                "conv models need a 3-entry dataset.shape (channels, height, width)"
            )
        if int(np.prod(shape)) != train.n_features:
            raise ConfigError(
                f"dataset.shape {tuple(shape)} does not cover "
                f"{train.n_features} features"
            )
        return build_conv_net(
            tuple(int(s) for s in shape), cfg.conv, cfg.hidden,
            train.n_classes, cfg.kernel, bn=cfg.bn, seed=cfg.seed,
        )
    return build_dense_net(
        train.n_features, cfg.hidden, train.n_classes, cfg.kernel,
        bn=cfg.bn, seed=cfg.seed,
    )
