"""Offline profiling: binarization, correlation, and per-neuron regression.

For every ReLU-layer neuron the calibration pass pairs the binary dot
product (sign-bit weights and inputs) with the base-precision pre-BN dot
product over a sample set, then fits y = m*x + b and keeps the Pearson
coefficient c. Neurons whose correlation does not clear the threshold —
or whose trace is degenerate — fall back to base-precision evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateFitError, ShapeError
from .model import QuantModel, forward_batch


def binarize_vector(v) -> np.ndarray:
    """Sign vector of int8 codes: -1 where v < 0, else +1 (sign(0) = +1).

    Vectorized: accepts arrays of any shape.
    """
    return np.where(np.asarray(v) < 0, -1, 1).astype(np.int8)


def binary_dot(a, b) -> int:
    """Dot product of two +/-1 sign vectors.

    Hardware computes this as n - 2*popcount(xor(bits)); the result parity
    always equals the parity of n.
    """
    av = np.asarray(a)
    bv = np.asarray(b)
    if av.ndim != 1 or bv.ndim != 1 or av.shape[0] != bv.shape[0]:
        raise ShapeError("binary_dot requires equal-length vectors")
    if av.shape[0] < 1:
        raise ShapeError("binary_dot requires length >= 1")
    return int(np.dot(av.astype(np.int64), bv.astype(np.int64)))


def _moments(x: np.ndarray, y: np.ndarray):
    """Centered second moments shared by pearson and linfit (single code path)."""
    xf = x.astype(np.float64)
    yf = y.astype(np.float64)
    dx = xf - xf.mean()
    dy = yf - yf.mean()
    return float(np.dot(dx, dx)), float(np.dot(dy, dy)), float(np.dot(dx, dy))


def _check_series(x, y, min_len=2):
    x = np.asarray(x)
    y = np.asarray(y)
    if x.ndim != 1 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ShapeError("series must be equal-length vectors")
    if x.shape[0] < min_len:
        raise ShapeError(f"series need at least {min_len} points")
    return x, y


def pearson(x, y) -> float:
    """Pearson correlation coefficient; 0.0 when either series has zero variance."""
    x, y = _check_series(x, y)
    if np.all(x == x[0]) or np.all(y == y[0]):
        return 0.0
    sxx, syy, sxy = _moments(x, y)
    c = sxy / np.sqrt(sxx * syy)
    return float(np.clip(c, -1.0, 1.0))


def linfit(x, y):
    """Least-squares slope and intercept of y over x."""
    x, y = _check_series(x, y)
    if np.all(x == x[0]):
        raise DegenerateFitError("x series has zero variance")
    sxx, _, sxy = _moments(x, y)
    m = sxy / sxx
    b = float(np.mean(y.astype(np.float64)) - m * np.mean(x.astype(np.float64)))
    return float(m), b


@dataclass(frozen=True)
class CalibrationTrace:
    """Paired per-neuron series: binary dot products and base pre-BN dot products."""

    p_bin: np.ndarray
    p_base: np.ndarray

    def __post_init__(self):
        p_bin, p_base = _check_series(self.p_bin, self.p_base)
        object.__setattr__(self, "p_bin", p_bin)
        object.__setattr__(self, "p_base", p_base)

    @property
    def sample_count(self) -> int:
        return int(self.p_bin.shape[0])


# Fixed-point grid the model container stores (c: Q2.30; m, b: Q40.24).
# Fitted parameters are snapped to it immediately so that in-memory runs
# and runs on a reloaded container behave identically.
C_GRID_BITS = 30
MB_GRID_BITS = 24


def _snap(value: float, bits: int) -> float:
    return round(float(value) * (1 << bits)) / (1 << bits)


@dataclass(frozen=True)
class PredictorParams:
    """Per-neuron predictor state: correlation c, fitted line (m, b), gating flags.

    Values live on the container's fixed-point grid. fit_valid is False
    when the trace was degenerate (or the layer has no ReLU); such neurons
    are always evaluated in base precision.
    """

    c: float
    m: float
    b: float
    enabled: bool
    fit_valid: bool = True

    def enabled_at(self, threshold: float) -> bool:
        """Re-derive the gate for a different threshold (used by sweeps)."""
        return self.fit_valid and self.c > threshold

    @staticmethod
    def disabled() -> "PredictorParams":
        return PredictorParams(0.0, 0.0, 0.0, enabled=False, fit_valid=False)


def fit_trace(trace: CalibrationTrace, threshold: float) -> PredictorParams:
    """Fit one neuron's trace; degenerate traces disable the predictor (c := 0)."""
    c = pearson(trace.p_bin, trace.p_base)
    try:
        m, b = linfit(trace.p_bin, trace.p_base)
    except DegenerateFitError:
        return PredictorParams.disabled()
    if np.all(trace.p_base == trace.p_base[0]):
        return PredictorParams.disabled()
    c = min(_snap(c, C_GRID_BITS), 1.0)
    return PredictorParams(c, _snap(m, MB_GRID_BITS), _snap(b, MB_GRID_BITS),
                           enabled=c > threshold, fit_valid=True)


def layer_series(model: QuantModel, record, layer_index: int):
    """(p_bin, p_base) matrices of shape (n_out, samples*positions) for one layer.

    p_bin pools all spatial positions and samples (one fitted line per
    filter); p_base is the raw int32 accumulator, before batch norm.
    """
    layer = model.layers[layer_index]
    rec = record.layers[layer_index]
    w_signs = binarize_vector(layer.weights).astype(np.int32)
    x_signs = binarize_vector(rec.cols).astype(np.int32)
    p_bin = np.matmul(w_signs[None], x_signs)           # (B, n_out, P)
    n_out = layer.n_out
    p_bin = np.moveaxis(p_bin, 1, 0).reshape(n_out, -1)
    p_base = np.moveaxis(rec.acc, 1, 0).reshape(n_out, -1)
    return p_bin, p_base


DEFAULT_CALIBRATION_SAMPLES = 1024
DEFAULT_THRESHOLD = 0.9


def calibrate_model(model: QuantModel, samples: np.ndarray,
                    threshold: float = DEFAULT_THRESHOLD):
    """Fit (c, m, b, enabled) for every neuron of every layer.

    samples is an int8 array of shape (n_samples, *input_shape) with
    n_samples >= 2. Neurons in layers without ReLU are emitted disabled.
    Returns one list[PredictorParams] per layer, in fixed neuron order.
    """
    samples = np.asarray(samples)
    if samples.ndim < 1 or samples.shape[0] < 2:
        raise ConfigError("calibration needs at least 2 samples")
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError("threshold must be within [0, 1]")
    record = forward_batch(model, samples)
    table = []
    for li, layer in enumerate(model.layers):
        if not layer.has_relu:
            table.append([PredictorParams.disabled() for _ in range(layer.n_out)])
            continue
        p_bin, p_base = layer_series(model, record, li)
        params = [
            fit_trace(CalibrationTrace(p_bin[n], p_base[n]), threshold)
            for n in range(layer.n_out)
        ]
        table.append(params)
    return table
