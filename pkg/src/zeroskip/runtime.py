"""Online hybrid zero-output prediction.

Decision rule per ReLU-layer output element: proxies are always evaluated
in base precision; a cluster member is skipped (output forced to 0) only
when its proxy's output is zero AND its own binary-regression estimate is
negative. Disabled members (c below threshold) and non-ReLU layers bypass
prediction entirely.

Prediction quality is measured against the true activation stream: each
layer is gated on the reference activations of the previous layer, so the
emitted outputs differ from the reference exactly at the predicted-zero
set. Error propagation through later layers is a model-accuracy effect
and is outside what this engine measures.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional, Sequence

import numpy as np

from .calibrate import PredictorParams, binarize_vector, binary_dot
from .clustering import ClusterPlan
from .errors import ConfigError, SchedulingError, ShapeError
from .model import Q16, QuantModel, QuantTensor, fold_batchnorm, forward_batch, _round_q16


class Outcome(IntEnum):
    """Per-element prediction outcome: correct/incorrect x zero/nonzero, plus not-predicted."""

    NOT_PREDICTED = 0
    CORRECT_ZERO = 1
    INCORRECT_ZERO = 2
    CORRECT_NONZERO = 3
    INCORRECT_NONZERO = 4


OUTCOME_NAMES = {
    Outcome.NOT_PREDICTED: "not_predicted",
    Outcome.CORRECT_ZERO: "correctly_predicted_zero",
    Outcome.INCORRECT_ZERO: "incorrectly_predicted_zero",
    Outcome.CORRECT_NONZERO: "correctly_predicted_nonzero",
    Outcome.INCORRECT_NONZERO: "incorrectly_predicted_nonzero",
}


@dataclass(frozen=True)
class HybridConfig:
    """Runtime predictor knobs.

    mode "hybrid" applies the proxy-and-regression conjunction; "binary"
    applies the regression estimate alone (used by sweeps for the
    component comparison). layer_mask disables prediction per layer.
    """

    threshold: float = 0.9
    predictor_enabled: bool = True
    layer_mask: Optional[Sequence[bool]] = None
    mode: str = "hybrid"
    oracle: bool = True

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("threshold must be within [0, 1]")
        if self.mode not in ("hybrid", "binary"):
            raise ConfigError(f"unknown predictor mode {self.mode!r}")

    def layer_active(self, index: int) -> bool:
        if not self.predictor_enabled:
            return False
        if self.layer_mask is None:
            return True
        return bool(self.layer_mask[index])


def _bn_floats(bn_moments):
    mu, sigma, gamma, beta = bn_moments
    if sigma <= 0:
        raise ValueError("batch-norm sigma must be > 0")
    a_q16, c_q16 = fold_batchnorm(
        _round_q16(mu), _round_q16(sigma), _round_q16(gamma), _round_q16(beta)
    )
    return a_q16 / float(1 << Q16), c_q16 / float(1 << Q16)


def estimate_base(p_bin: int, params: PredictorParams, bn=None, residual=None) -> float:
    """Estimated pre-ReLU value: BN(m*p_bin + b) + residual, stages as declared.

    bn, when present, is the (mu, sigma, gamma, beta) channel moments;
    residual is the already-computed source activation code.
    """
    if not params.enabled:
        raise ValueError("estimate requested for a disabled neuron")
    est = params.m * p_bin + params.b
    if bn is not None:
        a, c = _bn_floats(bn)
        est = a * est + c
    if residual is not None:
        est = est + residual
    return float(est)


def predict_member_zero(params: PredictorParams, weight_row, window,
                        proxy_output_zero, bn=None, residual=None) -> str:
    """Skip/evaluate decision for one cluster member at one input window.

    Returns "skip" iff the proxy produced a zero output, the member's
    predictor is enabled, and the estimated pre-ReLU value is negative.
    proxy_output_zero must be the proxy's actual outcome; None means the
    proxy has not been evaluated yet, which violates the schedule.
    """
    if proxy_output_zero is None:
        raise SchedulingError("member consulted before its proxy was evaluated")
    if not proxy_output_zero or not params.enabled:
        return "evaluate"
    p_bin = binary_dot(binarize_vector(weight_row), binarize_vector(window))
    return "skip" if estimate_base(p_bin, params, bn=bn, residual=residual) < 0.0 else "evaluate"


@dataclass
class LayerPrediction:
    """Per-layer hybrid results on one input.

    All arrays are (n_out, positions). outcome is None unless oracle mode
    labeled the quadrants.
    """

    emitted: np.ndarray
    skipped: np.ndarray
    consulted: np.ndarray
    predicted: np.ndarray
    outcome: Optional[np.ndarray]
    macs_per_element: int

    @property
    def elements(self) -> int:
        return int(self.skipped.size)

    def quadrant_counts(self) -> dict:
        if self.outcome is None:
            return {}
        return {
            OUTCOME_NAMES[o]: int(np.count_nonzero(self.outcome == o)) for o in Outcome
        }


@dataclass
class HybridResult:
    """Full hybrid run on one input: per-layer predictions plus the output tensor."""

    layers: list = field(default_factory=list)
    output: Optional[np.ndarray] = None

    def total_counts(self) -> dict:
        totals = {name: 0 for name in OUTCOME_NAMES.values()}
        for layer in self.layers:
            for name, count in layer.quadrant_counts().items():
                totals[name] += count
        return totals

    def macs_skipped(self) -> int:
        return sum(int(l.skipped.sum()) * l.macs_per_element for l in self.layers)

    def macs_total(self) -> int:
        return sum(l.elements * l.macs_per_element for l in self.layers)

    def binary_ops(self) -> int:
        return sum(int(l.consulted.sum()) * l.macs_per_element for l in self.layers)


def _layer_param_arrays(params: Sequence[PredictorParams], threshold: float):
    enabled = np.array([p.enabled_at(threshold) for p in params], dtype=bool)
    m = np.array([p.m for p in params], dtype=np.float64)
    b = np.array([p.b for p in params], dtype=np.float64)
    return enabled, m, b


def hybrid_forward(model: QuantModel, clusters: Sequence[ClusterPlan],
                   params_table, input_tensor, config: HybridConfig) -> HybridResult:
    """Run the hybrid predictor on one input against the reference stream.

    clusters and params_table hold one ClusterPlan / list[PredictorParams]
    per layer. Emitted outputs equal the reference at every element not
    predicted zero; predicted-zero elements are exactly 0.
    """
    if clusters is None or params_table is None:
        raise ConfigError("hybrid_forward needs a cluster plan and predictor parameters")
    if len(clusters) != model.num_layers or len(params_table) != model.num_layers:
        raise ConfigError("cluster plan / parameter table must cover every layer")
    data = input_tensor.data if isinstance(input_tensor, QuantTensor) else np.asarray(input_tensor)
    if tuple(data.shape) != model.input_shape:
        raise ShapeError("input shape does not match model input shape")
    record = forward_batch(model, data[None])

    result = HybridResult()
    for li, layer in enumerate(model.layers):
        rec = record.layers[li]
        true_codes = rec.codes[0]                     # (n_out, P)
        n_out, n_pos = true_codes.shape
        skipped = np.zeros((n_out, n_pos), dtype=bool)
        consulted = np.zeros((n_out, n_pos), dtype=bool)
        predicted = np.zeros((n_out, n_pos), dtype=bool)

        active = config.layer_active(li) and layer.has_relu and n_out > 0
        if active:
            enabled, m_arr, b_arr = _layer_param_arrays(params_table[li], config.threshold)
            est_gate = np.zeros((n_out, n_pos), dtype=bool)  # where the estimate decides
            if config.mode == "binary":
                est_gate[enabled, :] = True
                consulted = est_gate.copy()
                predicted = est_gate.copy()
            else:
                true_zero = true_codes == 0
                plan = clusters[li]
                for proxy, members in zip(plan.proxies, plan.members):
                    if not members:
                        continue
                    mem = np.fromiter(members, dtype=np.int64)
                    mem_enabled = mem[enabled[mem]]
                    predicted[mem_enabled, :] = True
                    if mem_enabled.size:
                        consulted[mem_enabled, :] = true_zero[proxy][None, :]
                est_gate = consulted

            rows = np.flatnonzero(est_gate.any(axis=1))
            if rows.size:
                w_signs = binarize_vector(layer.weights[rows]).astype(np.int32)
                x_signs = binarize_vector(rec.cols[0]).astype(np.int32)
                p_bin = w_signs @ x_signs             # (rows, P)
                est = m_arr[rows, None] * p_bin + b_arr[rows, None]
                if layer.bn is not None:
                    a = layer.bn.a_q16[rows, None] / float(1 << Q16)
                    c = layer.bn.c_q16[rows, None] / float(1 << Q16)
                    est = a * est + c
                if layer.has_residual:
                    src = record.layers[model.residual_sources[li]]
                    est = est + src.codes[0][rows].astype(np.float64)
                negative = np.zeros((n_out, n_pos), dtype=bool)
                negative[rows] = est < 0.0
                skipped = est_gate & negative

        emitted = true_codes.copy()
        emitted[skipped] = 0

        outcome = None
        if config.oracle:
            outcome = np.full((n_out, n_pos), Outcome.NOT_PREDICTED, dtype=np.uint8)
            if active:
                truly_zero = true_codes == 0
                outcome[predicted & skipped & truly_zero] = Outcome.CORRECT_ZERO
                outcome[predicted & skipped & ~truly_zero] = Outcome.INCORRECT_ZERO
                outcome[predicted & ~skipped & ~truly_zero] = Outcome.CORRECT_NONZERO
                outcome[predicted & ~skipped & truly_zero] = Outcome.INCORRECT_NONZERO

        result.layers.append(
            LayerPrediction(emitted, skipped, consulted, predicted, outcome, layer.k)
        )
    last = result.layers[-1]
    result.output = last.emitted.reshape(model.layers[-1].out_shape)
    return result


def negative_input_fraction(model: QuantModel, record) -> dict:
    """Fraction of MACs feeding negative pre-ReLU values (the motivation statistic).

    Per-layer element fractions plus the MAC-weighted overall share, taken
    over all layers (non-ReLU layers contribute to the denominator only).
    """
    per_layer = []
    neg_macs = 0
    all_macs = 0
    for layer, rec in zip(model.layers, record.layers):
        elems = rec.pre_relu.size
        macs = elems * layer.k
        all_macs += macs
        if layer.has_relu and elems:
            neg = int(np.count_nonzero(rec.pre_relu < 0))
            per_layer.append(neg / elems)
            neg_macs += neg * layer.k
        else:
            per_layer.append(0.0)
    return {
        "per_layer": per_layer,
        "overall_mac_fraction": neg_macs / all_macs if all_macs else 0.0,
    }
