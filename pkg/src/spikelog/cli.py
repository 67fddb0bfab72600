"""Command-line surface.

Subcommands cover the pipeline end to end: ``train`` fits the float
network and writes a trained-stage container plus an epoch trace CSV,
``convert`` turns that container into a fixed-point spiking model,
``infer`` runs the spiking model over a dataset (optionally with the
hardware cost model and a spike trace), ``ablate`` and ``sweep-bw``
drive the grid experiments, and ``report`` inspects any container.

Every command takes ``--config`` (a JSON file, or a name resolved in
$SPIKELOG_CONFIG_DIR) and ``--seed`` (overrides the config seed); all
are deterministic for a fixed seed.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import archmodel, conversion, engine, experiments, modelio, training
from .config import ConfigError, build_network, load_config, resolve_dataset
from .datasets import dataset_hash
from .training import TrainVariant


def _schedule_dict(schedule) -> dict:
    return {
        "total_epochs": schedule.total_epochs,
        "relu_until": schedule.relu_until,
        "ttfs_from": schedule.ttfs_from,
        "lr0": schedule.lr0,
        "lr_decay_epochs": list(schedule.lr_decay_epochs),
        "momentum": schedule.momentum,
        "weight_decay": schedule.weight_decay,
        "batch_size": schedule.batch_size,
        "allow_early_ttfs": schedule.allow_early_ttfs,
    }


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.seed)
    train_ds, test_ds = resolve_dataset(cfg)
    net = build_network(cfg, train_ds)
    result = training.train(
        net, train_ds.x, train_ds.y, cfg.schedule, variant=cfg.variant,
        x_test=test_ds.x, y_test=test_ds.y,
    )
    provenance = {
        "seed": cfg.seed,
        "variant": cfg.variant.value,
        "schedule": _schedule_dict(cfg.schedule),
        "dataset_hash": dataset_hash(train_ds),
        "train_acc": result.train_acc,
        "test_acc": result.test_acc,
    }
    out = Path(args.out)
    modelio.save_network(result.net, out, provenance)
    trace_path = Path(args.trace) if args.trace else out.with_suffix(".trace.csv")
    with open(trace_path, "w") as fh:
        fh.write("epoch,lr,activation,train_acc,test_acc\n")
        for row in result.trace:
            fh.write(
                f"{row.epoch},{row.lr},{row.activation},"
                f"{row.train_acc:.4f},{row.test_acc:.4f}\n"
            )
    print(f"trained {len(result.trace)} epochs "
          f"(train {result.train_acc:.4f}, test {result.test_acc:.4f})")
    print(f"model written to {out}")
    print(f"trace written to {trace_path}")
    return 0


def cmd_convert(args) -> int:
    cfg = load_config(args.config, args.seed)
    net, provenance = modelio.load_network(args.model)
    train_ds, _ = resolve_dataset(cfg)
    fused = training.fuse_batchnorm(net)
    model = conversion.convert(
        fused, train_ds.x,
        bit_width=cfg.bit_width, step_exp=cfg.step_exp,
        zero_flush=cfg.zero_flush, lut_frac_bits=cfg.lut_frac_bits,
        acc_frac_bits=cfg.acc_frac_bits,
        calibration_limit=cfg.dataset.get("calibration_limit"),
    )
    model.provenance["ann"] = provenance
    out = Path(args.out) if args.out else Path(args.model).with_suffix(".snn.spkl")
    modelio.save_model(model, out)
    print(f"converted at bw={cfg.bit_width} z_w={cfg.step_exp} "
          f"(output scale {model.output_scale:.6g})")
    print(f"model written to {out}")
    return 0


def cmd_infer(args) -> int:
    cfg = load_config(args.config, args.seed)
    model = modelio.load_model(args.model)
    _, test_ds = resolve_dataset(cfg)
    expected = int(np.prod(model.input_shape))
    if test_ds.n_features != expected:
        raise ValueError(
            f"dataset provides {test_ds.n_features} features but the model "
            f"expects {expected}"
        )
    ev = engine.evaluate(model, test_ds.x, test_ds.y, mode=args.mode)
    print(f"images={len(test_ds)}")
    print(f"accuracy={ev.accuracy:.4f}")
    ann_acc = model.provenance.get("ann", {}).get("test_acc")
    if ann_acc is not None:
        print(f"conversion_loss={ev.accuracy - ann_acc:+.4f}")
    print(f"latency_steps={ev.latency}")
    spikes = np.mean([sum(len(ids) for ids in r.spike_ids) for r in ev.runs])
    print(f"spikes_per_image={spikes:.2f}")
    fans = [model.layers[li].fan_outs() for li in range(len(model.layers))]
    sops = np.mean([
        sum(int(fans[li][ids].sum()) for li, ids in enumerate(r.spike_ids))
        for r in ev.runs
    ])
    print(f"sops_per_image={sops:.2f}")
    if args.arch:
        report = archmodel.build_report(ev, model, cfg.arch, batch_size=args.batch)
        for line in report.as_kv():
            print(line)
        print()
        print(report.render())
    if args.trace:
        result = engine.run_network(model, test_ds.x[0], mode=args.mode)
        with open(args.trace, "w") as fh:
            fh.write("layer,neuron_id,timestep\n")
            for layer, neuron, t in engine.trace_rows(result):
                fh.write(f"{layer},{neuron},{t}\n")
        print(f"spike trace (first image) written to {args.trace}")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config, args.seed)
    cells = experiments.ablation_grid(cfg)
    csv_text = experiments.ablation_csv(cells)
    if args.out:
        Path(args.out).write_text(csv_text)
        print(f"grid written to {args.out}")
    print(csv_text, end="")
    return 0


def cmd_sweep_bw(args) -> int:
    cfg = load_config(args.config, args.seed)
    bits = [int(b) for b in args.bits.split(",")]
    rows = experiments.sweep_bitwidths(cfg, bits)
    csv_text = experiments.sweep_csv(rows)
    if args.out:
        Path(args.out).write_text(csv_text)
        print(f"sweep written to {args.out}")
    print(csv_text, end="")
    return 0


def cmd_report(args) -> int:
    stage = modelio.container_stage(args.model)
    if stage == modelio.STAGE_ANN:
        net, provenance = modelio.load_network(args.model)
        print(f"stage: trained float network ({len(net.layers)} layers)")
        k = net.kernel
        print(f"kernel: T={k.window} tau={k.tau} theta0={k.v_threshold}")
        for li, layer in enumerate(net.layers):
            bn = " +bn" if layer.bn is not None else ""
            print(f"  layer {li}: {layer.kind} {layer.weights.shape}{bn}")
        for key in ("seed", "variant", "train_acc", "test_acc", "dataset_hash"):
            if key in provenance:
                print(f"{key}: {provenance[key]}")
        return 0
    model = modelio.load_model(args.model)
    k = model.kernel
    print(f"stage: converted spiking model ({len(model.layers)} layers)")
    print(f"kernel: T={k.window} tau={k.tau} theta0={k.v_threshold}")
    print(f"output_scale: {model.output_scale:.6g}")
    print(f"latency_steps: {model.latency}")
    for li, layer in enumerate(model.layers):
        print(
            f"  layer {li}: {layer.kind} {layer.in_width}->{layer.out_width} "
            f"bw={layer.scheme.bit_width} fsr={layer.scheme.fsr} "
            f"params={layer.param_count}"
        )
    for key, val in sorted(model.provenance.items()):
        if key != "ann":
            print(f"{key}: {val}")
    ann = model.provenance.get("ann", {})
    if "test_acc" in ann:
        print(f"source float accuracy: {ann['test_acc']:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spikelog",
        description="Train, convert, and execute log-domain spiking classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="config JSON path or name in $SPIKELOG_CONFIG_DIR")
        p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("train", help="train the float network")
    common(p)
    p.add_argument("-o", "--out", default="model.ann.spkl", help="output container")
    p.add_argument("--trace", help="epoch trace CSV path (default: <out>.trace.csv)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("convert", help="convert a trained container to a spiking model")
    common(p)
    p.add_argument("model", help="trained-stage container")
    p.add_argument("-o", "--out", help="output container (default: <model>.snn.spkl)")
    p.set_defaults(fn=cmd_convert)

    p = sub.add_parser("infer", help="run a spiking model over the config dataset")
    common(p)
    p.add_argument("model", help="converted-stage container")
    p.add_argument("--arch", action="store_true", help="include hardware cost model")
    p.add_argument("--trace", help="write first-image spike trace CSV here")
    p.add_argument("--mode", choices=("fixed", "reference"), default="fixed")
    p.add_argument("--batch", type=int, default=1, help="batch size for weight-reuse accounting")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("ablate", help="training-variant grid across kernel settings")
    common(p)
    p.add_argument("-o", "--out", help="write the grid CSV here")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("sweep-bw", help="accuracy across weight bit widths")
    common(p)
    p.add_argument("--bits", default="8,5,4,3", help="comma-separated bit widths")
    p.add_argument("-o", "--out", help="write the sweep CSV here")
    p.set_defaults(fn=cmd_sweep_bw)

    p = sub.add_parser("report", help="summarize a model container")
    p.add_argument("model", help="container of either stage")
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ValueError, OSError, training.TrainingDiverged) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
