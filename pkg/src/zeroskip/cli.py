"""Command-line pipeline: calibrate -> cluster -> run -> sim -> sweep -> report."""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import container as cont
from .calibrate import DEFAULT_THRESHOLD, calibrate_model
from .clustering import cluster_layer
from .errors import ConfigError, ContainerFormatError
from .runtime import HybridConfig, hybrid_forward, negative_input_fraction
from .model import forward_batch
from .simulator import (AccelConfig, CostModel, DramConfig,
                        run_stats_from_jsonl, run_stats_to_jsonl, simulate)

SWEEP_FIELDS = [
    "threshold", "variant", "ops_saved_pct", "macs_skipped", "macs_total",
    "correctly_predicted_zero", "incorrectly_predicted_zero",
    "correctly_predicted_nonzero", "incorrectly_predicted_nonzero", "not_predicted",
]


def load_config(path):
    """JSON file with optional "accel" (incl. nested "dram") and "cost" sections."""
    if path is None:
        return AccelConfig(), CostModel()
    with open(path) as f:
        raw = json.load(f)
    accel_raw = dict(raw.get("accel", {}))
    dram_raw = accel_raw.pop("dram", None)
    try:
        dram = DramConfig(**dram_raw) if dram_raw else DramConfig()
        accel = AccelConfig(dram=dram, **accel_raw)
        cost = CostModel(**raw.get("cost", {}))
    except TypeError as e:
        raise ConfigError(f"bad config file {path}: {e}") from e
    return accel, cost


def _load_samples(bundle, path):
    flat = cont.load_tensor(path)
    expect = int(np.prod(bundle.model.input_shape))
    if flat.shape[1] != expect:
        raise ConfigError(
            f"sample width {flat.shape[1]} does not match model input size {expect}"
        )
    return flat.reshape((flat.shape[0],) + bundle.model.input_shape)


def cmd_calibrate(args) -> int:
    bundle = cont.load_model(args.model)
    samples = _load_samples(bundle, args.samples)
    params = calibrate_model(bundle.model, samples, threshold=args.threshold)
    out = cont.ModelBundle(bundle.model, bundle.clusters, params)
    cont.save_model(out, args.out)
    enabled = sum(p.enabled for layer in params for p in layer)
    total = sum(len(layer) for layer in params)
    print(f"calibrated {total} neurons at T={args.threshold}: {enabled} enabled")
    return 0


def cmd_cluster(args) -> int:
    bundle = cont.load_model(args.model)
    clusters = [cluster_layer(l.weights, args.max_angle) for l in bundle.model.layers]
    out = cont.ModelBundle(bundle.model, clusters, bundle.params)
    cont.save_model(out, args.out)
    for li, plan in enumerate(clusters):
        print(f"layer {li}: {len(plan.proxies)} proxies, "
              f"{plan.member_count()} members, {len(plan.singletons)} singletons")
    return 0


def _quadrant_totals(results):
    totals = {}
    for res in results:
        for name, count in res.total_counts().items():
            totals[name] = totals.get(name, 0) + count
    return totals


def cmd_run(args) -> int:
    bundle = cont.load_model(args.model)
    samples = _load_samples(bundle, args.samples)
    config = HybridConfig(threshold=args.threshold, mode=args.mode, oracle=args.oracle)
    results = [
        hybrid_forward(bundle.model, bundle.clusters, bundle.params, x, config)
        for x in samples
    ]
    macs_total = sum(r.macs_total() for r in results)
    macs_skipped = sum(r.macs_skipped() for r in results)
    ref = forward_batch(bundle.model, samples)
    report = {
        "inputs": len(results),
        "threshold": args.threshold,
        "mode": args.mode,
        "macs_total": macs_total,
        "macs_skipped": macs_skipped,
        "ops_saved_pct": 100.0 * macs_skipped / macs_total if macs_total else 0.0,
        "binary_ops": sum(r.binary_ops() for r in results),
        "negative_pre_relu": negative_input_fraction(bundle.model, ref),
    }
    if args.oracle:
        report["quadrants"] = _quadrant_totals(results)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    print(text)
    return 0


def cmd_sim(args) -> int:
    bundle = cont.load_model(args.model)
    samples = _load_samples(bundle, args.samples)
    accel, cost = load_config(args.config)
    predictor_on = args.predictor == "on"
    stats = simulate(
        bundle.model, samples, accel, cost,
        predictor_on=predictor_on,
        clusters=bundle.clusters,
        params_table=bundle.params,
        runtime_config=HybridConfig(threshold=args.threshold, oracle=False),
        model_hash=cont.model_hash(bundle),
    )
    text = run_stats_to_jsonl(stats)
    with open(args.out, "w") as f:
        f.write(text)
    total = stats.totals()
    print(f"predictor={args.predictor}: {total.cycles} cycles, "
          f"{total.macs_executed}/{total.macs_total} MACs executed, "
          f"energy={stats.energy['total']:.1f}")
    return 0


def sweep_rows(bundle, samples, thresholds):
    """One hybrid and one binary-only row per threshold, descending T."""
    rows = []
    for t in sorted(thresholds, reverse=True):
        for mode in ("hybrid", "binary"):
            config = HybridConfig(threshold=t, mode=mode, oracle=True)
            results = [
                hybrid_forward(bundle.model, bundle.clusters, bundle.params, x, config)
                for x in samples
            ]
            macs_total = sum(r.macs_total() for r in results)
            macs_skipped = sum(r.macs_skipped() for r in results)
            quadrants = _quadrant_totals(results)
            rows.append({
                "threshold": t,
                "variant": mode,
                "ops_saved_pct": 100.0 * macs_skipped / macs_total if macs_total else 0.0,
                "macs_skipped": macs_skipped,
                "macs_total": macs_total,
                **quadrants,
            })
    return rows


def cmd_sweep(args) -> int:
    bundle = cont.load_model(args.model)
    samples = _load_samples(bundle, args.samples)
    thresholds = [float(t) for t in args.thresholds.split(",") if t.strip()]
    if not thresholds:
        print("error: empty threshold list", file=sys.stderr)
        return 2
    rows = sweep_rows(bundle, samples, thresholds)
    with open(args.out, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=SWEEP_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {len(rows)} sweep rows to {args.out}")
    return 0


def cmd_report(args) -> int:
    with open(args.on) as f:
        on = run_stats_from_jsonl(f.read())
    with open(args.off) as f:
        off = run_stats_from_jsonl(f.read())
    if on.model_hash != off.model_hash:
        print("error: model hashes differ between the paired runs; refusing to compare",
              file=sys.stderr)
        return 2
    t_on, t_off = on.totals(), off.totals()
    speedup = t_off.cycles / t_on.cycles if t_on.cycles else float("inf")
    e_on, e_off = on.energy, off.energy
    lines = [
        f"cycles: {t_off.cycles} -> {t_on.cycles}  (speedup {speedup:.2f}x)",
        f"macs executed: {t_off.macs_executed} -> {t_on.macs_executed}",
        f"dram bytes: {t_off.dram_read_bytes + t_off.dram_write_bytes} -> "
        f"{t_on.dram_read_bytes + t_on.dram_write_bytes}",
        f"dynamic energy: {e_off.get('dynamic_total', 0):.1f} -> {e_on.get('dynamic_total', 0):.1f}  "
        f"({_savings(e_off.get('dynamic_total', 0), e_on.get('dynamic_total', 0)):.1f}% saved)",
        f"total energy: {e_off.get('total', 0):.1f} -> {e_on.get('total', 0):.1f}  "
        f"({_savings(e_off.get('total', 0), e_on.get('total', 0)):.1f}% saved)",
        f"predictor hardware share: {e_on.get('predictor_share', 0):.1f}",
    ]
    print("\n".join(lines))
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["metric", "predictor_off", "predictor_on"])
            writer.writerow(["cycles", t_off.cycles, t_on.cycles])
            writer.writerow(["speedup", 1.0, round(speedup, 6)])
            writer.writerow(["macs_executed", t_off.macs_executed, t_on.macs_executed])
            writer.writerow(["dram_bytes",
                             t_off.dram_read_bytes + t_off.dram_write_bytes,
                             t_on.dram_read_bytes + t_on.dram_write_bytes])
            writer.writerow(["dynamic_energy",
                             e_off.get("dynamic_total", 0), e_on.get("dynamic_total", 0)])
            writer.writerow(["total_energy", e_off.get("total", 0), e_on.get("total", 0)])
    return 0


def _savings(off: float, on: float) -> float:
    return 100.0 * (1.0 - on / off) if off else 0.0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zeroskip",
        description="Zero-output prediction pipeline and accelerator simulation",
    )
    parser.add_argument("--seed", type=int, default=0, help="seed for any sampled state")
    parser.add_argument("--config", default=None, help="JSON accelerator/cost config")
    parser.add_argument("--oracle", action="store_true",
                        help="label prediction outcomes against the reference run")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="fit per-neuron predictor parameters")
    p.add_argument("--model", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("cluster", help="build angle-based proxy clusters")
    p.add_argument("--model", required=True)
    p.add_argument("--max-angle", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("run", help="hybrid prediction statistics over samples")
    p.add_argument("--model", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--mode", choices=["hybrid", "binary"], default="hybrid")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sim", help="accelerator simulation (cycles, traffic, energy)")
    p.add_argument("--model", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--predictor", choices=["on", "off"], default="on")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("sweep", help="threshold sweep CSV (hybrid and binary variants)")
    p.add_argument("--model", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--thresholds", required=True,
                   help="comma-separated list, e.g. 1.0,0.95,0.9,0.8,0.7,0.6")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="compare paired predictor-on/off stats")
    p.add_argument("--on", required=True)
    p.add_argument("--off", required=True)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ContainerFormatError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
