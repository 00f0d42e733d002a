"""Synthetic model and workload builders for experiments and tests."""

from __future__ import annotations

import math

import numpy as np

from .model import BnParams, ConvGeom, LayerDesc, QuantModel


def _auto_shift(k: int, w_std: float, x_std: float, target: float = 96.0) -> int:
    """out_shift putting ~2 sigma of the accumulator at the target code."""
    sigma = math.sqrt(k) * w_std * x_std
    return max(0, round(math.log2(max(2 * sigma / target, 1.0))))


def random_model(rng: np.random.Generator, n_layers=None, max_neurons=64,
                 allow_conv=False, allow_bn=True, allow_residual=True) -> QuantModel:
    """Random small FC(/CONV) chain with mixed ReLU / batch-norm / residual layers.

    Layers without ReLU are mixed in so that deeper ReLU layers sometimes
    see signed inputs (post-ReLU codes are nonnegative, which makes their
    binarized inputs constant and the predictor fall back to base
    precision there - a real property, not a fixture artifact).
    """
    n_layers = int(n_layers if n_layers is not None else rng.integers(2, 6))
    layers = []
    residual_sources = {}

    use_conv = allow_conv and bool(rng.integers(0, 2))
    if use_conv:
        c, h, w = int(rng.integers(1, 4)), int(rng.integers(4, 9)), int(rng.integers(4, 9))
        input_shape = (c, h, w)
    else:
        input_shape = (int(rng.integers(4, max(5, max_neurons // 2))),)

    prev_shape = input_shape
    for li in range(n_layers):
        in_size = int(np.prod(prev_shape))
        conv = None
        if use_conv and li == 0:
            kh = int(rng.integers(1, min(3, prev_shape[1]) + 1))
            kw = int(rng.integers(1, min(3, prev_shape[2]) + 1))
            conv = ConvGeom(prev_shape[0], prev_shape[1], prev_shape[2], kh, kw,
                            stride_h=int(rng.integers(1, 3)), stride_w=int(rng.integers(1, 3)),
                            pad_h=int(rng.integers(0, 2)), pad_w=int(rng.integers(0, 2)))
            n_out = int(rng.integers(2, 9))
            k = conv.window_len
            kind = "conv"
        else:
            n_out = int(rng.integers(2, max_neurons + 1))
            k = in_size
            kind = "fc"
        weights = rng.integers(-100, 101, size=(n_out, k)).astype(np.int8)

        has_relu = li < n_layers - 1 or bool(rng.integers(0, 2))
        if li == n_layers - 1 and rng.integers(0, 3) == 0:
            has_relu = False

        bn = None
        out_shift = _auto_shift(k, 58.0, 64.0)
        if allow_bn and rng.integers(0, 2):
            sigma_acc = math.sqrt(k) * 58.0 * 64.0
            mu = rng.normal(0.0, sigma_acc / 4, size=n_out)
            sigma = sigma_acc * rng.uniform(0.5, 2.0, size=n_out)
            gamma = rng.uniform(20.0, 60.0, size=n_out) * rng.choice([-1.0, 1.0], size=n_out)
            beta = rng.uniform(-30.0, 30.0, size=n_out)
            bn = BnParams.from_values(mu, sigma, gamma, beta)
            out_shift = 0

        has_residual = False
        if allow_residual and kind == "fc" and li > 0 and rng.integers(0, 4) == 0:
            for src in range(li - 1, -1, -1):
                if layers[src].out_shape == (n_out,):
                    residual_sources[li] = src
                    has_residual = True
                    break

        layers.append(LayerDesc(kind, weights, conv=conv, bn=bn,
                                has_residual=has_residual, has_relu=has_relu,
                                out_shift=out_shift))
        prev_shape = layers[-1].out_shape
    return QuantModel(layers, input_shape, residual_sources)


def random_inputs(rng: np.random.Generator, model: QuantModel, n: int) -> np.ndarray:
    """n uniform signed int8 inputs shaped for the model."""
    return rng.integers(-100, 101, size=(n,) + model.input_shape).astype(np.int8)


def correlated_model(k: int = 256, n_neurons: int = 256, w_mag: int = 3,
                     bias: int = 4, seed: int = 0) -> QuantModel:
    """Single-layer fixture with perfectly self-correlated neurons and 0-degree clusters.

    Every weight row carries the same sign pattern with magnitude w_mag,
    so all pairwise angles are 0 and, fed with inputs of constant
    magnitude, the base dot product is an exact multiple of the binary
    one (c = 1). The positive bias (applied as a folded batch norm)
    pushes the true-zero output fraction above one half.
    """
    rng = np.random.default_rng(seed)
    pattern = rng.choice([-1, 1], size=k).astype(np.int8)
    weights = np.tile(pattern * w_mag, (n_neurons, 1)).astype(np.int8)
    bn = BnParams.from_values([bias] * n_neurons, [1.0] * n_neurons,
                              [1.0] * n_neurons, [0.0] * n_neurons)
    shift = max(0, round(math.log2(max(k * w_mag / 48.0, 1.0))))
    layer = LayerDesc("fc", weights, bn=bn, has_relu=True, out_shift=shift)
    return QuantModel([layer], (k,))


def pm_inputs(rng: np.random.Generator, model: QuantModel, n: int, x_mag: int = 2) -> np.ndarray:
    """Inputs whose elements are all +/-x_mag (constant magnitude, random signs)."""
    signs = rng.choice([-1, 1], size=(n,) + model.input_shape)
    return (signs * x_mag).astype(np.int8)
