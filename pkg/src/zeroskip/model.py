"""Integer-only reference inference for int8 FC/CONV layers.

All arithmetic is exact: int8 codes, int32 accumulators, and a Q16.16
fixed-point domain for everything between the accumulator and the output
requantizer (batch norm, residual addition, ReLU). The forward pass is a
pure function of the model and input, so it serves as the ground truth
every predictor experiment is judged against.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .errors import ShapeError

Q16 = 16
Q16_ONE = 1 << Q16

# Magnitude bounds on the folded batch-norm affine, chosen so that
# a_q16 * acc + c_q16 always fits in int64 for |acc| < 2^31.
_MAX_A_Q16 = 1 << 28
_MAX_C_Q16 = 1 << 47


def _round_q16(value) -> int:
    """Round a real number to Q16.16, half to even (exact for Fraction inputs)."""
    f = Fraction(value) * Q16_ONE
    floor = f.numerator // f.denominator
    rem = f - floor
    if rem > Fraction(1, 2) or (rem == Fraction(1, 2) and floor % 2 != 0):
        floor += 1
    return floor


@dataclass(frozen=True)
class QuantTensor:
    """int8 code tensor plus the rational scale binding codes to real values."""

    shape: tuple
    data: np.ndarray
    scale: Fraction = Fraction(1)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.dtype != np.int8:
            if np.any(arr < -128) or np.any(arr > 127):
                raise ValueError("tensor codes outside int8 range")
            arr = arr.astype(np.int8)
        arr = arr.reshape(self.shape)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "shape", tuple(self.shape))
        if self.scale <= 0:
            raise ValueError("scale must be positive")


def fold_batchnorm(mu_q16: int, sigma_q16: int, gamma_q16: int, beta_q16: int):
    """Fold Q16.16 moments into the per-channel affine (a, c') = (gamma/sigma, beta - gamma*mu/sigma).

    Exact rational arithmetic on the quantized moments, rounded half-even
    back to Q16.16. sigma must be strictly positive.
    """
    if sigma_q16 <= 0:
        raise ValueError("batch-norm sigma must be > 0")
    a = Fraction(gamma_q16, sigma_q16)
    c = Fraction(beta_q16, Q16_ONE) - Fraction(gamma_q16 * mu_q16, sigma_q16 * Q16_ONE)
    a_q16 = _round_q16(a)
    c_q16 = _round_q16(c)
    if abs(a_q16) > _MAX_A_Q16 or abs(c_q16) > _MAX_C_Q16:
        raise ValueError("batch-norm affine magnitude outside supported range")
    return a_q16, c_q16


class BnParams:
    """Per-channel batch-norm moments (Q16.16) with their folded affine."""

    __slots__ = ("mu_q16", "sigma_q16", "gamma_q16", "beta_q16", "a_q16", "c_q16")

    def __init__(self, mu_q16, sigma_q16, gamma_q16, beta_q16):
        self.mu_q16 = np.asarray(mu_q16, dtype=np.int64)
        self.sigma_q16 = np.asarray(sigma_q16, dtype=np.int64)
        self.gamma_q16 = np.asarray(gamma_q16, dtype=np.int64)
        self.beta_q16 = np.asarray(beta_q16, dtype=np.int64)
        n = self.mu_q16.shape[0]
        if not (self.sigma_q16.shape[0] == self.gamma_q16.shape[0] == self.beta_q16.shape[0] == n):
            raise ShapeError("batch-norm parameter arrays must have equal length")
        if np.any(self.sigma_q16 <= 0):
            raise ValueError("batch-norm sigma must be > 0 for every channel")
        folded = [
            fold_batchnorm(int(m), int(s), int(g), int(b))
            for m, s, g, b in zip(self.mu_q16, self.sigma_q16, self.gamma_q16, self.beta_q16)
        ]
        self.a_q16 = np.array([f[0] for f in folded], dtype=np.int64)
        self.c_q16 = np.array([f[1] for f in folded], dtype=np.int64)

    @classmethod
    def from_values(cls, mu, sigma, gamma, beta) -> "BnParams":
        """Quantize real-valued per-channel moments to Q16.16."""
        mu = np.atleast_1d(mu)
        sigma = np.atleast_1d(sigma)
        gamma = np.atleast_1d(gamma)
        beta = np.atleast_1d(beta)
        return cls(
            [_round_q16(v) for v in mu],
            [_round_q16(v) for v in sigma],
            [_round_q16(v) for v in gamma],
            [_round_q16(v) for v in beta],
        )

    @property
    def num_channels(self) -> int:
        return int(self.mu_q16.shape[0])

    def __eq__(self, other):
        if not isinstance(other, BnParams):
            return NotImplemented
        return (
            np.array_equal(self.mu_q16, other.mu_q16)
            and np.array_equal(self.sigma_q16, other.sigma_q16)
            and np.array_equal(self.gamma_q16, other.gamma_q16)
            and np.array_equal(self.beta_q16, other.beta_q16)
        )


@dataclass(frozen=True)
class ConvGeom:
    """Input geometry and kernel/stride/padding of a CONV layer."""

    in_channels: int
    in_h: int
    in_w: int
    kernel_h: int
    kernel_w: int
    stride_h: int = 1
    stride_w: int = 1
    pad_h: int = 0
    pad_w: int = 0

    def __post_init__(self):
        if min(self.in_channels, self.in_h, self.in_w, self.kernel_h, self.kernel_w) < 1:
            raise ValueError("conv dimensions must be >= 1")
        if min(self.stride_h, self.stride_w) < 1 or min(self.pad_h, self.pad_w) < 0:
            raise ValueError("invalid stride/padding")
        if self.out_h < 1 or self.out_w < 1:
            raise ShapeError("conv kernel does not fit the padded input")

    @property
    def out_h(self) -> int:
        return (self.in_h + 2 * self.pad_h - self.kernel_h) // self.stride_h + 1

    @property
    def out_w(self) -> int:
        return (self.in_w + 2 * self.pad_w - self.kernel_w) // self.stride_w + 1

    @property
    def window_len(self) -> int:
        return self.in_channels * self.kernel_h * self.kernel_w


class LayerDesc:
    """One FC or CONV layer: weight rows plus batch-norm / residual / ReLU flags.

    Weight rows are stored as (n_out, k) int8 with -128 clamped to -127 at
    construction so the 7-bit serialized magnitudes agree with the runtime.
    """

    __slots__ = ("kind", "weights", "conv", "bn", "has_residual", "has_relu", "out_shift")

    def __init__(self, kind, weights, conv=None, bn=None,
                 has_residual=False, has_relu=True, out_shift=0):
        if kind not in ("fc", "conv"):
            raise ValueError(f"unknown layer kind {kind!r}")
        w = np.asarray(weights)
        if np.any(w < -128) or np.any(w > 127):
            raise ValueError("weights outside int8 range")
        if kind == "conv":
            if conv is None:
                raise ValueError("conv layer requires geometry")
            if w.ndim == 4:
                w = w.reshape(w.shape[0], -1)
            if w.ndim != 2 or w.shape[1] != conv.window_len:
                raise ShapeError("conv weight rows must have length in_channels*kh*kw")
        else:
            if conv is not None:
                raise ValueError("fc layer takes no conv geometry")
            if w.ndim != 2:
                raise ShapeError("fc weights must be a (n_out, k) matrix")
        if w.shape[0] < 1 or w.shape[1] < 1:
            raise ShapeError("layer must have at least one neuron and one weight")
        w = np.maximum(w.astype(np.int16), -127).astype(np.int8)
        if bn is not None and bn.num_channels != w.shape[0]:
            raise ShapeError("batch-norm channel count must equal neuron count")
        if out_shift < -Q16:
            raise ValueError(f"out_shift must be >= {-Q16}")
        self.kind = kind
        self.weights = w
        self.conv = conv
        self.bn = bn
        self.has_residual = bool(has_residual)
        self.has_relu = bool(has_relu)
        self.out_shift = int(out_shift)

    @property
    def n_out(self) -> int:
        return int(self.weights.shape[0])

    @property
    def k(self) -> int:
        return int(self.weights.shape[1])

    @property
    def n_positions(self) -> int:
        return 1 if self.kind == "fc" else self.conv.out_h * self.conv.out_w

    @property
    def out_shape(self) -> tuple:
        if self.kind == "fc":
            return (self.n_out,)
        return (self.n_out, self.conv.out_h, self.conv.out_w)

    @property
    def in_size(self) -> int:
        return self.k if self.kind == "fc" else self.conv.in_channels * self.conv.in_h * self.conv.in_w

    def __eq__(self, other):
        if not isinstance(other, LayerDesc):
            return NotImplemented
        return (
            self.kind == other.kind
            and np.array_equal(self.weights, other.weights)
            and self.conv == other.conv
            and self.bn == other.bn
            and self.has_residual == other.has_residual
            and self.has_relu == other.has_relu
            and self.out_shift == other.out_shift
        )


class QuantModel:
    """Ordered layer list with residual wiring and the model input shape.

    Immutable after construction; safe to share across threads.
    """

    __slots__ = ("layers", "residual_sources", "input_shape")

    def __init__(self, layers: Sequence[LayerDesc], input_shape,
                 residual_sources: Optional[dict] = None):
        layers = list(layers)
        if not layers:
            raise ShapeError("model needs at least one layer")
        residual_sources = dict(residual_sources or {})
        input_shape = tuple(input_shape)

        size = int(np.prod(input_shape))
        for i, layer in enumerate(layers):
            if layer.in_size != size:
                raise ShapeError(
                    f"layer {i} expects input size {layer.in_size}, chain provides {size}"
                )
            if layer.has_residual != (i in residual_sources):
                raise ShapeError(f"layer {i} residual flag does not match residual wiring")
            if i in residual_sources:
                src = residual_sources[i]
                if not (0 <= src < i):
                    raise ShapeError(f"residual source {src} must precede consumer {i}")
                if layers[src].out_shape != layer.out_shape:
                    raise ShapeError(f"residual shapes differ between layers {src} and {i}")
            size = int(np.prod(layer.out_shape))

        self.layers = tuple(layers)
        self.residual_sources = residual_sources
        self.input_shape = input_shape

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def layer_out_shapes(self):
        return [layer.out_shape for layer in self.layers]

    def total_macs(self) -> int:
        return sum(l.n_out * l.k * l.n_positions for l in self.layers)

    def __eq__(self, other):
        if not isinstance(other, QuantModel):
            return NotImplemented
        return (
            self.input_shape == other.input_shape
            and self.residual_sources == other.residual_sources
            and len(self.layers) == len(other.layers)
            and all(a == b for a, b in zip(self.layers, other.layers))
        )


def dot_product(weights, inputs) -> int:
    """Exact int32 dot product of two int8 vectors (lengths <= 2^15 never saturate)."""
    w = np.asarray(weights)
    x = np.asarray(inputs)
    if w.ndim != 1 or x.ndim != 1 or w.shape[0] != x.shape[0]:
        raise ShapeError("dot_product requires equal-length vectors")
    if w.shape[0] < 1:
        raise ShapeError("dot_product requires length >= 1")
    for v in (w, x):
        if np.any(v < -128) or np.any(v > 127):
            raise ValueError("dot_product operands must be int8 codes")
    return int(np.dot(w.astype(np.int64), x.astype(np.int64)))


def apply_batchnorm(acc: int, mu, sigma, gamma, beta) -> int:
    """Batch-normalize one accumulator; returns the Q16.16 pre-activation value.

    Moments are quantized to Q16.16 and folded to (a, c') exactly as the
    layer engine does, so the scalar op and the vectorized path agree
    bit-for-bit.
    """
    if sigma <= 0:
        raise ValueError("batch-norm sigma must be > 0")
    a_q16, c_q16 = fold_batchnorm(
        _round_q16(mu), _round_q16(sigma), _round_q16(gamma), _round_q16(beta)
    )
    return a_q16 * int(acc) + c_q16


def relu(x):
    """max(x, 0); relu(0) == 0."""
    return max(x, 0)


def requantize(v_q16, out_shift: int, *, lo: int = -128, hi: int = 127) -> np.ndarray:
    """Map Q16.16 values to int8 codes: round half toward +inf, then clamp."""
    v = np.asarray(v_q16, dtype=np.int64)
    s = Q16 + out_shift
    if s < 0:
        raise ValueError("out_shift below -16 is not supported")
    if s > 0:
        v = (v + (1 << (s - 1))) >> s
    return np.clip(v, lo, hi).astype(np.int8)


def _im2col(x: np.ndarray, geom: ConvGeom) -> np.ndarray:
    """(B, C, H, W) int8 -> (B, window_len, out_h*out_w) with zero padding."""
    b = x.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (geom.pad_h, geom.pad_h), (geom.pad_w, geom.pad_w)))
    oh, ow = geom.out_h, geom.out_w
    cols = np.empty((b, geom.in_channels, geom.kernel_h, geom.kernel_w, oh, ow), dtype=np.int8)
    for i in range(geom.kernel_h):
        for j in range(geom.kernel_w):
            cols[:, :, i, j] = xp[
                :, :,
                i : i + geom.stride_h * oh : geom.stride_h,
                j : j + geom.stride_w * ow : geom.stride_w,
            ]
    return cols.reshape(b, geom.window_len, oh * ow)


@dataclass
class LayerRecord:
    """Everything a layer produced for a batch of inputs.

    cols:     (B, k, P) int8 input windows (FC: the input vector, P=1)
    acc:      (B, n_out, P) int32 pre-batch-norm dot products
    pre_relu: (B, n_out, P) int64 Q16.16 values after BN and residual
    codes:    (B, n_out, P) int8 requantized post-activation outputs
    """

    cols: np.ndarray
    acc: np.ndarray
    pre_relu: np.ndarray
    codes: np.ndarray
    out_shape: tuple


@dataclass
class ForwardRecord:
    """Per-layer activations of a reference forward pass (batch axis first)."""

    layers: list = field(default_factory=list)

    def output_codes(self, sample: int = 0) -> np.ndarray:
        last = self.layers[-1]
        return last.codes[sample].reshape(last.out_shape)


def forward_batch(model: QuantModel, inputs: np.ndarray) -> ForwardRecord:
    """Reference inference over a batch; inputs is (B, *input_shape) int8."""
    xs = np.asarray(inputs, dtype=np.int8)
    if xs.shape[1:] != model.input_shape:
        raise ShapeError(
            f"input shape {xs.shape[1:]} does not match model input {model.input_shape}"
        )
    b = xs.shape[0]
    record = ForwardRecord()
    x = xs
    for i, layer in enumerate(model.layers):
        if layer.kind == "fc":
            cols = x.reshape(b, layer.k, 1)
        else:
            g = layer.conv
            cols = _im2col(x.reshape(b, g.in_channels, g.in_h, g.in_w), g)
        acc = np.matmul(layer.weights.astype(np.int32)[None], cols.astype(np.int32))
        v = acc.astype(np.int64)
        if layer.bn is not None:
            v = layer.bn.a_q16[None, :, None] * v + layer.bn.c_q16[None, :, None]
        else:
            v = v << Q16
        if layer.has_residual:
            src = record.layers[model.residual_sources[i]]
            v = v + (src.codes.astype(np.int64) << Q16)
        pre_relu = v
        if layer.has_relu:
            v = np.maximum(v, 0)
        codes = requantize(v, layer.out_shift)
        record.layers.append(LayerRecord(cols, acc, pre_relu, codes, layer.out_shape))
        x = codes.reshape((b,) + layer.out_shape)
    return record


def forward_reference(model: QuantModel, input_tensor: QuantTensor) -> ForwardRecord:
    """Single-input reference forward pass (no prediction applied)."""
    if tuple(input_tensor.shape) != model.input_shape:
        raise ShapeError(
            f"input shape {input_tensor.shape} does not match model input {model.input_shape}"
        )
    return forward_batch(model, input_tensor.data[None])
