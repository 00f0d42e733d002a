#!/usr/bin/env python3
"""End-to-end demo: build a fixture, calibrate, cluster, predict, simulate, report.

Equivalent to the CLI sequence

    zeroskip calibrate -> cluster -> run -> sim (on/off) -> report

but driven through the library so the intermediate numbers can be printed
along the way.
"""

import argparse

import numpy as np

from zeroskip import (AccelConfig, CostModel, HybridConfig, ModelBundle,
                      calibrate_model, cluster_layer, hybrid_forward,
                      model_hash, simulate)
from zeroskip.synth import correlated_model, pm_inputs, random_inputs, random_model


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--preset", choices=["random", "correlated"], default="correlated")
    parser.add_argument("--seed", type=int, default=8)
    parser.add_argument("--threshold", type=float, default=0.9)
    parser.add_argument("--inputs", type=int, default=32)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    if args.preset == "correlated":
        model = correlated_model(k=256, n_neurons=256, seed=args.seed)
        cal = pm_inputs(rng, model, 128)
        xs = pm_inputs(rng, model, args.inputs)
    else:
        model = random_model(rng, max_neurons=64)
        cal = random_inputs(rng, model, 256)
        xs = random_inputs(rng, model, args.inputs)

    print(f"[1/4] calibrating {sum(l.n_out for l in model.layers)} neurons "
          f"on {len(cal)} samples (T={args.threshold})")
    params = calibrate_model(model, cal, threshold=args.threshold)
    enabled = sum(p.enabled for layer in params for p in layer)
    print(f"      {enabled} predictors enabled")

    print("[2/4] clustering weight rows by angle")
    clusters = [cluster_layer(l.weights) for l in model.layers]
    for li, plan in enumerate(clusters):
        print(f"      layer {li}: {len(plan.proxies)} proxies / "
              f"{plan.member_count()} members / {len(plan.singletons)} singletons")

    print(f"[3/4] hybrid prediction over {len(xs)} inputs")
    config = HybridConfig(threshold=args.threshold, oracle=True)
    quadrants = {}
    skipped = total = 0
    for x in xs:
        res = hybrid_forward(model, clusters, params, x, config)
        skipped += res.macs_skipped()
        total += res.macs_total()
        for k, v in res.total_counts().items():
            quadrants[k] = quadrants.get(k, 0) + v
    print(f"      {100 * skipped / total:.1f}% of MACs predicted away")
    for name, count in sorted(quadrants.items()):
        print(f"      {name}: {count}")

    print("[4/4] accelerator simulation (predictor on vs off)")
    bundle = ModelBundle(model, clusters, params)
    digest = model_hash(bundle)
    accel, cost = AccelConfig(), CostModel()
    runtime = HybridConfig(threshold=args.threshold, oracle=False)
    on = simulate(model, xs, accel, cost, True, clusters, params,
                  runtime_config=runtime, model_hash=digest)
    off = simulate(model, xs, accel, cost, False, clusters, params, model_hash=digest)
    speedup = off.cycles / on.cycles
    saved = 100 * (1 - on.energy["dynamic_total"] / off.energy["dynamic_total"])
    print(f"      cycles {off.cycles} -> {on.cycles}  (speedup {speedup:.2f}x)")
    print(f"      dynamic energy saved: {saved:.1f}%")
    print(f"      predictor hardware share: "
          f"{100 * on.energy['predictor_share'] / on.energy['total']:.2f}% of total")


if __name__ == "__main__":
    main()
