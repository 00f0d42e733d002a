#!/usr/bin/env python3
"""Generate a synthetic model container and calibration tensor file.

Presets:
  random      mixed FC/CONV chain with batch norm and residual layers
  correlated  single layer with c=1 neurons and one 0-degree cluster
"""

import argparse
from pathlib import Path

import numpy as np

from zeroskip import bundle_from_model, save_model, save_tensor
from zeroskip.calibrate import DEFAULT_CALIBRATION_SAMPLES
from zeroskip.synth import correlated_model, pm_inputs, random_inputs, random_model


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--preset", choices=["random", "correlated"], default="random")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--samples", type=int, default=DEFAULT_CALIBRATION_SAMPLES)
    parser.add_argument("--layers", type=int, default=None)
    parser.add_argument("--neurons", type=int, default=64)
    parser.add_argument("--out-dir", default="fixture")
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    if args.preset == "random":
        model = random_model(rng, n_layers=args.layers, max_neurons=args.neurons,
                             allow_conv=True)
        samples = random_inputs(rng, model, args.samples)
    else:
        model = correlated_model(k=args.neurons, n_neurons=args.neurons, seed=args.seed)
        samples = pm_inputs(rng, model, args.samples)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_model(bundle_from_model(model), out / "model.mork")
    save_tensor(samples.reshape(samples.shape[0], -1), out / "samples.qtsr")
    shapes = " -> ".join(str(l.out_shape) for l in model.layers)
    print(f"model: input {model.input_shape}, layers {shapes}")
    print(f"wrote {out / 'model.mork'} and {out / 'samples.qtsr'} ({args.samples} samples)")


if __name__ == "__main__":
    main()
