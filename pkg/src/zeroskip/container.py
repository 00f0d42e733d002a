"""Bit-exact model container and the calibration tensor file.

The container stores each layer as a proxy table followed by a member
table grouped by cluster in proxy order. Member weight rows pack the sign
bits and the 7-bit magnitudes into one bitstream of exactly k bytes, so
the serialized member bytes never exceed the plain 8-bit baseline. The
full byte layout is documented in docs/FORMAT.md.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
import numpy as np

from .calibrate import C_GRID_BITS, MB_GRID_BITS, PredictorParams
from .clustering import ClusterPlan
from .errors import ContainerFormatError, ShapeError
from .model import BnParams, ConvGeom, LayerDesc, QuantModel

MAGIC = b"MORK"
VERSION = 1
TENSOR_MAGIC = b"QTSR"

_C_FRAC_BITS = C_GRID_BITS   # c stored as Q2.30
_MB_FRAC_BITS = MB_GRID_BITS  # m, b stored as Q40.24
_MB_LIMIT = 1 << 29  # keeps quantized m, b exactly representable in float64

FLAG_ENABLED = 1
FLAG_FIT_VALID = 2


@dataclass
class ModelBundle:
    """A QuantModel plus its per-layer cluster plans and predictor parameters."""

    model: QuantModel
    clusters: list
    params: list

    def __post_init__(self):
        if len(self.clusters) != self.model.num_layers or len(self.params) != self.model.num_layers:
            raise ShapeError("bundle needs one cluster plan and parameter list per layer")
        for layer, plan, params in zip(self.model.layers, self.clusters, self.params):
            if plan.covered() != set(range(layer.n_out)):
                raise ShapeError("cluster plan does not cover the layer's neurons exactly")
            if len(params) != layer.n_out:
                raise ShapeError("parameter list length must equal neuron count")

    def __eq__(self, other):
        if not isinstance(other, ModelBundle):
            return NotImplemented
        return (
            self.model == other.model
            and self.clusters == other.clusters
            and self.params == other.params
        )


def bundle_from_model(model: QuantModel) -> ModelBundle:
    """Fresh bundle: all-singleton plans, every predictor disabled."""
    clusters = [ClusterPlan.all_singletons(l.n_out) for l in model.layers]
    params = [[PredictorParams.disabled() for _ in range(l.n_out)] for l in model.layers]
    return ModelBundle(model, clusters, params)


def pack_member_row(weights: np.ndarray) -> bytes:
    """k sign bits then k 7-bit magnitudes, LSB-first, in exactly k bytes."""
    w = np.asarray(weights, dtype=np.int64)
    k = w.shape[0]
    if np.any(w < -127) or np.any(w > 127):
        raise ValueError("member weights must be within [-127, 127]")
    stream = 0
    for i, v in enumerate(w):
        if v < 0:
            stream |= 1 << i
    for i, v in enumerate(w):
        stream |= int(abs(int(v))) << (k + 7 * i)
    return stream.to_bytes(k, "little")


def unpack_member_row(data: bytes, k: int) -> np.ndarray:
    """Inverse of pack_member_row."""
    if len(data) != k:
        raise ValueError(f"member row must be exactly {k} bytes")
    stream = int.from_bytes(data, "little")
    out = np.empty(k, dtype=np.int8)
    for i in range(k):
        mag = (stream >> (k + 7 * i)) & 0x7F
        out[i] = -mag if (stream >> i) & 1 else mag
    return out


def _quant(value: float, frac_bits: int, limit: int, what: str) -> int:
    if not abs(value) <= limit:
        raise ValueError(f"{what}={value} outside the serializable range (+/-{limit})")
    return round(float(value) * (1 << frac_bits))


def _params_to_row(p: PredictorParams) -> tuple:
    c_q = _quant(p.c, _C_FRAC_BITS, 1, "c")
    m_q = _quant(p.m, _MB_FRAC_BITS, _MB_LIMIT, "m")
    b_q = _quant(p.b, _MB_FRAC_BITS, _MB_LIMIT, "b")
    flags = (FLAG_ENABLED if p.enabled else 0) | (FLAG_FIT_VALID if p.fit_valid else 0)
    return c_q, m_q, b_q, flags


def _params_from_row(c_q: int, m_q: int, b_q: int, flags: int) -> PredictorParams:
    return PredictorParams(
        c=c_q / (1 << _C_FRAC_BITS),
        m=m_q / (1 << _MB_FRAC_BITS),
        b=b_q / (1 << _MB_FRAC_BITS),
        enabled=bool(flags & FLAG_ENABLED),
        fit_valid=bool(flags & FLAG_FIT_VALID),
    )


class _Writer:
    def __init__(self):
        self.chunks = []

    def pack(self, fmt: str, *values):
        self.chunks.append(struct.pack("<" + fmt, *values))

    def raw(self, data: bytes):
        self.chunks.append(data)

    def getvalue(self) -> bytes:
        return b"".join(self.chunks)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.data):
            raise ContainerFormatError("truncated container", self.offset)
        values = struct.unpack_from(fmt, self.data, self.offset)
        self.offset += size
        return values

    def raw(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise ContainerFormatError("truncated container", self.offset)
        out = self.data[self.offset : self.offset + size]
        self.offset += size
        return out

    def done(self):
        if self.offset != len(self.data):
            raise ContainerFormatError("trailing bytes after container end", self.offset)


def serialize_model(bundle: ModelBundle) -> bytes:
    w = _Writer()
    model = bundle.model
    w.raw(MAGIC)
    w.pack("HBB", VERSION, 1, 0)  # version, little-endian tag, reserved
    w.pack("I", model.num_layers)
    w.pack("B3x", len(model.input_shape))
    for dim in model.input_shape:
        w.pack("I", dim)
    w.pack("I", len(model.residual_sources))
    for consumer in sorted(model.residual_sources):
        w.pack("II", consumer, model.residual_sources[consumer])

    for layer, plan, params in zip(model.layers, bundle.clusters, bundle.params):
        flags = ((1 if layer.bn is not None else 0)
                 | (2 if layer.has_residual else 0)
                 | (4 if layer.has_relu else 0))
        w.pack("BBbB", 0 if layer.kind == "fc" else 1, flags, layer.out_shift, 0)
        w.pack("II", layer.n_out, layer.k)
        if layer.kind == "conv":
            g = layer.conv
            w.pack("IIIBBBBBBH", g.in_channels, g.in_h, g.in_w,
                   g.kernel_h, g.kernel_w, g.stride_h, g.stride_w,
                   g.pad_h, g.pad_w, 0)
        if layer.bn is not None:
            for ch in range(layer.n_out):
                w.pack("qqqq", int(layer.bn.mu_q16[ch]), int(layer.bn.sigma_q16[ch]),
                       int(layer.bn.gamma_q16[ch]), int(layer.bn.beta_q16[ch]))
        w.pack("I", len(plan.proxies))
        for proxy, members in zip(plan.proxies, plan.members):
            w.pack("IH", proxy, len(members))
            w.raw(layer.weights[proxy].tobytes())
        w.pack("I", plan.member_count())
        for members in plan.members:
            for m in members:
                w.raw(pack_member_row(layer.weights[m]))
                w.pack("I", m)
        for p in params:
            c_q, m_q, b_q, pflags = _params_to_row(p)
            w.pack("iqqB", c_q, m_q, b_q, pflags)
    return w.getvalue()


def deserialize_model(data: bytes) -> ModelBundle:
    r = _Reader(data)
    if r.raw(4) != MAGIC:
        raise ContainerFormatError("bad magic", 0)
    version, endian, _ = r.unpack("HBB")
    if version != VERSION:
        raise ContainerFormatError(f"unsupported version {version}", 4)
    if endian != 1:
        raise ContainerFormatError("unsupported endianness tag", 6)
    (num_layers,) = r.unpack("I")
    (rank,) = r.unpack("B3x")
    input_shape = tuple(r.unpack("I")[0] for _ in range(rank))
    (n_res,) = r.unpack("I")
    residual_sources = {}
    for _ in range(n_res):
        consumer, source = r.unpack("II")
        residual_sources[consumer] = source

    layers = []
    clusters = []
    params = []
    for _ in range(num_layers):
        kind_code, flags, out_shift, _ = r.unpack("BBbB")
        if kind_code not in (0, 1):
            raise ContainerFormatError(f"unknown layer kind {kind_code}", r.offset - 4)
        n_out, k = r.unpack("II")
        conv = None
        if kind_code == 1:
            in_c, in_h, in_w, kh, kw, sh, sw, ph, pw, _ = r.unpack("IIIBBBBBBH")
            conv = ConvGeom(in_c, in_h, in_w, kh, kw, sh, sw, ph, pw)
        bn = None
        if flags & 1:
            rows = [r.unpack("qqqq") for _ in range(n_out)]
            bn = BnParams(
                [row[0] for row in rows], [row[1] for row in rows],
                [row[2] for row in rows], [row[3] for row in rows],
            )
        weights = np.zeros((n_out, k), dtype=np.int8)
        seen = np.zeros(n_out, dtype=bool)

        (proxy_count,) = r.unpack("I")
        proxies = []
        sizes = []
        for _ in range(proxy_count):
            idx, size = r.unpack("IH")
            if idx >= n_out or seen[idx]:
                raise ContainerFormatError(f"bad proxy index {idx}", r.offset - 6)
            weights[idx] = np.frombuffer(r.raw(k), dtype=np.int8)
            seen[idx] = True
            proxies.append(int(idx))
            sizes.append(size)
        (member_count,) = r.unpack("I")
        if member_count != sum(sizes):
            raise ContainerFormatError(
                "member count does not match the proxy cluster sizes", r.offset - 4
            )
        members = []
        for size in sizes:
            group = []
            for _ in range(size):
                row = r.raw(k)
                (idx,) = r.unpack("I")
                if idx >= n_out or seen[idx]:
                    raise ContainerFormatError(f"bad member index {idx}", r.offset - 4)
                weights[idx] = unpack_member_row(row, k)
                seen[idx] = True
                group.append(int(idx))
            members.append(tuple(group))
        if not seen.all():
            raise ContainerFormatError("tables do not cover every neuron", r.offset)

        layer_params = []
        for _ in range(n_out):
            c_q, m_q, b_q, pflags = r.unpack("iqqB")
            layer_params.append(_params_from_row(c_q, m_q, b_q, pflags))

        layers.append(LayerDesc(
            "fc" if kind_code == 0 else "conv", weights, conv=conv, bn=bn,
            has_residual=bool(flags & 2), has_relu=bool(flags & 4),
            out_shift=out_shift,
        ))
        clusters.append(ClusterPlan(tuple(proxies), tuple(members)))
        params.append(layer_params)
    r.done()
    model = QuantModel(layers, input_shape, residual_sources)
    return ModelBundle(model, clusters, params)


def save_model(bundle: ModelBundle, path) -> None:
    with open(path, "wb") as f:
        f.write(serialize_model(bundle))


def load_model(path) -> ModelBundle:
    with open(path, "rb") as f:
        return deserialize_model(f.read())


def model_hash(bundle: ModelBundle) -> str:
    return hashlib.sha256(serialize_model(bundle)).hexdigest()


def save_tensor(samples: np.ndarray, path) -> None:
    """Calibration tensor file: 16-byte header then row-major int8 payload."""
    arr = np.asarray(samples, dtype=np.int8)
    flat = arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr.reshape(1, -1)
    with open(path, "wb") as f:
        f.write(TENSOR_MAGIC)
        f.write(struct.pack("<BBH", 1, 2, 0))
        f.write(struct.pack("<II", flat.shape[0], flat.shape[1]))
        f.write(flat.tobytes())


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    r = _Reader(data)
    if r.raw(4) != TENSOR_MAGIC:
        raise ContainerFormatError("bad tensor magic", 0)
    dtype, rank, _ = r.unpack("BBH")
    if dtype != 1 or rank != 2:
        raise ContainerFormatError("unsupported tensor dtype/rank", 4)
    n, d = r.unpack("II")
    payload = r.raw(n * d)
    r.done()
    return np.frombuffer(payload, dtype=np.int8).reshape(n, d).copy()
