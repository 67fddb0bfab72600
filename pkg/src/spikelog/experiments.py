"""Experiment harnesses: ablation grid, bit-width sweep, schedule stability.

Each harness is deterministic given its config and seed and returns
plain rows that the CLI renders as CSV; the test suite drives the same
entry points.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

from . import conversion, engine, training
from .config import ExperimentConfig, build_network, resolve_dataset
from .training import TrainingDiverged, TrainVariant

ABLATION_SETTINGS: Tuple[Tuple[int, int], ...] = ((48, 8), (24, 4), (12, 2))
ABLATION_VARIANTS: Tuple[TrainVariant, ...] = (
    TrainVariant.CLIP,
    TrainVariant.CLIP_ENCODE,
    TrainVariant.FULL,
)


@dataclass
class CellResult:
    """One ablation cell: a variant trained and converted at one (T, tau)."""

    variant: str
    window: int
    tau: int
    ann_acc: float
    snn_acc: float

    @property
    def loss(self) -> float:
        """Accuracy delta, converted minus float; negative means loss."""
        return self.snn_acc - self.ann_acc


def _with_kernel(cfg: ExperimentConfig, window: int, tau: int) -> ExperimentConfig:
    doc = json.loads(json.dumps(cfg.raw))
    doc["kernel"] = {"T": window, "tau": tau, "theta0": cfg.kernel.v_threshold}
    return ExperimentConfig.from_dict(doc)


def run_cell(
    cfg: ExperimentConfig,
    variant: TrainVariant,
    window: Optional[int] = None,
    tau: Optional[int] = None,
    seed: Optional[int] = None,
) -> CellResult:
    """Train one variant at one kernel setting, convert, measure both sides."""
    if seed is not None:
        cfg = cfg.with_seed(seed)
    if window is not None:
        cfg = _with_kernel(cfg, window, tau)
    train_ds, test_ds = resolve_dataset(cfg)
    net = build_network(cfg, train_ds)
    result = training.train(
        net, train_ds.x, train_ds.y, cfg.schedule, variant=variant,
        x_test=test_ds.x, y_test=test_ds.y,
    )
    fused = training.fuse_batchnorm(result.net)
    calib = train_ds.x
    limit = cfg.dataset.get("calibration_limit")
    model = conversion.convert(
        fused, calib,
        bit_width=cfg.bit_width, step_exp=cfg.step_exp,
        zero_flush=cfg.zero_flush, lut_frac_bits=cfg.lut_frac_bits,
        acc_frac_bits=cfg.acc_frac_bits,
        calibration_limit=limit,
    )
    ev = engine.evaluate(model, test_ds.x, test_ds.y, mode="fixed")
    return CellResult(
        variant=variant.value,
        window=cfg.kernel.window,
        tau=cfg.kernel.tau,
        ann_acc=result.test_acc,
        snn_acc=ev.accuracy,
    )


def ablation_grid(
    cfg: ExperimentConfig,
    settings: Sequence[Tuple[int, int]] = ABLATION_SETTINGS,
    variants: Sequence[TrainVariant] = ABLATION_VARIANTS,
) -> List[CellResult]:
    """The full variant-by-kernel grid at one seed."""
    cells = []
    for window, tau in settings:
        for variant in variants:
            cells.append(run_cell(cfg, variant, window=window, tau=tau))
    return cells


def ablation_csv(cells: List[CellResult]) -> str:
    """Grid rows as CSV, one row per kernel setting."""
    variants = []
    for c in cells:
        if c.variant not in variants:
            variants.append(c.variant)
    buf = io.StringIO()
    cols = ["T", "tau"]
    for v in variants:
        cols += [f"{v}_ann", f"{v}_snn", f"{v}_loss"]
    buf.write(",".join(cols) + "\n")
    settings = []
    for c in cells:
        if (c.window, c.tau) not in settings:
            settings.append((c.window, c.tau))
    index = {(c.window, c.tau, c.variant): c for c in cells}
    for window, tau in settings:
        row = [str(window), str(tau)]
        for v in variants:
            c = index[(window, tau, v)]
            row += [f"{c.ann_acc:.4f}", f"{c.snn_acc:.4f}", f"{c.loss:+.4f}"]
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def sweep_bitwidths(
    cfg: ExperimentConfig,
    bit_widths: Sequence[int] = (8, 5, 4, 3),
    variant: TrainVariant = TrainVariant.FULL,
) -> List[Tuple[int, float, float]]:
    """(bit_width, ann accuracy, converted accuracy) on one trained net.

    The network is trained once; only the post-training weight grid
    changes between rows, isolating the quantization effect.
    """
    train_ds, test_ds = resolve_dataset(cfg)
    net = build_network(cfg, train_ds)
    result = training.train(
        net, train_ds.x, train_ds.y, cfg.schedule, variant=variant,
        x_test=test_ds.x, y_test=test_ds.y,
    )
    fused = training.fuse_batchnorm(result.net)
    rows = []
    for bw in bit_widths:
        model = conversion.convert(
            fused, train_ds.x,
            bit_width=int(bw), step_exp=cfg.step_exp,
            zero_flush=cfg.zero_flush, lut_frac_bits=cfg.lut_frac_bits,
            acc_frac_bits=cfg.acc_frac_bits,
            calibration_limit=cfg.dataset.get("calibration_limit"),
        )
        ev = engine.evaluate(model, test_ds.x, test_ds.y, mode="fixed")
        rows.append((int(bw), result.test_acc, ev.accuracy))
    return rows


def sweep_csv(rows: List[Tuple[int, float, float]]) -> str:
    buf = io.StringIO()
    buf.write("bw,ann_acc,snn_acc,loss\n")
    for bw, ann, snn in rows:
        buf.write(f"{bw},{ann:.4f},{snn:.4f},{snn - ann:+.4f}\n")
    return buf.getvalue()


@dataclass
class StabilityOutcome:
    """What happened when the coding stage started at a given epoch."""

    ttfs_from: int
    diverged: bool
    clip_peak: float
    final_acc: float
    trace: list

    @property
    def drop(self) -> float:
        return self.clip_peak - self.final_acc


def stability_run(cfg: ExperimentConfig, ttfs_from: int) -> StabilityOutcome:
    """Train with the coding stage starting after epoch ttfs_from.

    Early switch points run with the schedule validator's learning-rate
    guard disabled, which is the whole point of the experiment.
    """
    schedule = replace(cfg.schedule, ttfs_from=ttfs_from, allow_early_ttfs=True)
    train_ds, test_ds = resolve_dataset(cfg)
    net = build_network(cfg, train_ds)
    try:
        result = training.train(
            net, train_ds.x, train_ds.y, schedule, variant=TrainVariant.FULL,
            x_test=test_ds.x, y_test=test_ds.y,
        )
        trace = result.trace
        diverged = False
        final = result.test_acc
    except TrainingDiverged as e:
        trace = e.trace
        diverged = True
        final = 0.0
    clip_rows = [r.test_acc for r in trace if r.activation == "clip"]
    return StabilityOutcome(
        ttfs_from=ttfs_from,
        diverged=diverged,
        clip_peak=max(clip_rows) if clip_rows else 0.0,
        final_acc=final,
        trace=trace,
    )
