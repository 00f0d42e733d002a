#!/usr/bin/env python3
"""Workload characterization of a model over a sample set.

Prints the statistics the predictor design rests on, none of which are
asserted at desk scale:
  * share of computations feeding negative pre-ReLU values
  * distribution of per-neuron binary/base correlation coefficients
  * distribution of closest-neighbor weight angles per layer
  * a small threshold sweep (hybrid vs binary-only)
"""

import argparse

import numpy as np

from zeroskip import (ModelBundle, build_angle_graph, calibrate_model,
                      cluster_layer, forward_batch, load_model, load_tensor)
from zeroskip.clustering import closest_angle_histogram
from zeroskip.cli import sweep_rows
from zeroskip.runtime import negative_input_fraction


def _bar(count, total, width=40):
    n = int(width * count / total) if total else 0
    return "#" * n


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--model", required=True, help="model container (.mork)")
    parser.add_argument("--samples", required=True, help="tensor file (.qtsr)")
    parser.add_argument("--threshold", type=float, default=0.9)
    args = parser.parse_args()

    bundle = load_model(args.model)
    model = bundle.model
    flat = load_tensor(args.samples)
    xs = flat.reshape((flat.shape[0],) + model.input_shape)

    record = forward_batch(model, xs)
    neg = negative_input_fraction(model, record)
    print("== negative pre-ReLU inputs ==")
    for li, frac in enumerate(neg["per_layer"]):
        relu = "relu" if model.layers[li].has_relu else "no-relu"
        print(f"  layer {li} ({relu}): {frac:6.1%}")
    print(f"  overall (MAC-weighted): {neg['overall_mac_fraction']:.1%}")

    params = calibrate_model(model, xs, threshold=args.threshold)
    cs = np.array([p.c for layer in params for p in layer
                   if p.fit_valid])
    print("\n== correlation coefficient distribution ==")
    edges = np.arange(-1.0, 1.01, 0.25)
    counts, _ = np.histogram(cs, bins=edges)
    for lo, hi, n in zip(edges, edges[1:], counts):
        print(f"  [{lo:+.2f},{hi:+.2f}): {n:5d} {_bar(n, len(cs))}")
    print(f"  (plus {sum(1 for layer in params for p in layer if not p.fit_valid)}"
          " degenerate/non-ReLU neurons)")

    print("\n== closest-neighbor angles ==")
    for li, layer in enumerate(model.layers):
        if layer.n_out < 2:
            continue
        graph = build_angle_graph(layer.weights)
        edges, counts = closest_angle_histogram(graph, bin_width=10.0)
        print(f"  layer {li}:")
        for lo, n in zip(edges, counts):
            if n:
                print(f"    {lo:5.0f}-{lo + 10:3.0f} deg: {n:4d} {_bar(n, layer.n_out)}")

    print("\n== threshold sweep ==")
    clusters = [cluster_layer(l.weights) for l in model.layers]
    bundle = ModelBundle(model, clusters, params)
    rows = sweep_rows(bundle, xs, [1.0, 0.95, 0.9, 0.8, 0.7, 0.6])
    print(f"  {'T':>5} {'variant':>7} {'saved%':>7} {'incorrect-zero':>14}")
    for row in rows:
        print(f"  {row['threshold']:5.2f} {row['variant']:>7} "
              f"{row['ops_saved_pct']:7.2f} {row['incorrectly_predicted_zero']:14d}")


if __name__ == "__main__":
    main()
