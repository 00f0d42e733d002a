"""Event-counting accelerator simulator with cycle-approximate timing.

Hardware model (documented here because every test oracle derives from it):

* num_cus compute units, each finishing one assigned output element in
  ceil(k / cu_width) cycles after its weight row is buffered and the layer
  input is resident in the input SRAM. A CU is occupied from assignment
  until compute completes (weight fetch included).
* num_bincus binary units; one binary dot product costs
  ceil(k / bincu_width) cycles.
* DRAM is a fixed-latency pipe: a request for n bytes occupies the shared
  bus for ceil(ceil(n/burst)*burst / bandwidth) cycles (FIFO order) and
  completes latency_cycles after its transfer drains.
* Per layer: the input feature bytes load first (blocks sized to the input
  SRAM), then the binary sign regions of all threshold-enabled members
  (streamed through the binWeight SRAM), then compute.
* Work order: unlocked cluster members always outrank proxies. Members
  gated by prediction unlock when their proxy's element completes: proxy
  output zero sends them through a binCU (skip decision), otherwise they
  unlock directly. Members whose predictor is disabled, and every element
  of non-predicted layers, are free from the start. A bounded FIFO
  (member_fifo_entries) holds unlocked members awaiting a CU.
* Skipped elements cost no weight payload fetch and no CU time; their
  zero output is still written to DRAM with the rest of the layer output.

Timing fidelity gaps (deliberate): no DRAM banking, no per-window input
reload for CONV (each input byte is fetched once per layer), and weight
rows are fetched once per neuron per layer regardless of which CU runs
its spatial positions.
"""

from __future__ import annotations

import heapq
import json
import math
from collections import deque
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .clustering import ClusterPlan
from .errors import ConfigError
from .model import LayerDesc, QuantModel
from .runtime import HybridConfig, hybrid_forward


@dataclass(frozen=True)
class DramConfig:
    """Parametric main-memory model (stands in for a full DRAM simulator).

    The pipe rate is bandwidth_bytes_per_cycle, which defaults to the port
    width at matched accelerator/memory clocks; port_width_bytes itself is
    carried for reporting.
    """

    port_width_bytes: int = 8
    burst_bytes: int = 64
    latency_cycles: int = 100
    bandwidth_bytes_per_cycle: float = 8.0

    def __post_init__(self):
        if self.port_width_bytes < 1 or self.burst_bytes < 1:
            raise ConfigError("DRAM port/burst must be >= 1 byte")
        if self.latency_cycles < 0 or self.bandwidth_bytes_per_cycle <= 0:
            raise ConfigError("DRAM latency must be >= 0 and bandwidth > 0")


@dataclass(frozen=True)
class AccelConfig:
    """Accelerator hardware parameters (compute units, SRAMs, memory pipe)."""

    num_cus: int = 8
    cu_width: int = 8
    num_bincus: int = 8
    bincu_width: int = 64
    input_sram_bytes: int = 16 * 1024
    binweight_sram_bytes: int = 2 * 1024
    cu_buffer_bytes: int = 1024
    bincu_buffer_bytes: int = 576
    frequency_mhz: int = 1200
    member_fifo_entries: int = 256
    input_block_bytes: Optional[int] = None
    dram: DramConfig = field(default_factory=DramConfig)

    def __post_init__(self):
        counts = (self.num_cus, self.cu_width, self.num_bincus, self.bincu_width,
                  self.input_sram_bytes, self.binweight_sram_bytes,
                  self.cu_buffer_bytes, self.bincu_buffer_bytes,
                  self.frequency_mhz, self.member_fifo_entries)
        if min(counts) < 1:
            raise ConfigError("all accelerator counts and sizes must be >= 1")
        if self.input_block_bytes is not None and self.input_block_bytes > self.input_sram_bytes:
            raise ConfigError("configured input block exceeds the input SRAM")

    @staticmethod
    def unconstrained_memory(**overrides) -> "AccelConfig":
        """Config with a zero-latency, infinite-bandwidth memory (compute-bound)."""
        dram = DramConfig(latency_cycles=0, bandwidth_bytes_per_cycle=math.inf)
        return AccelConfig(dram=dram, **overrides)


@dataclass(frozen=True)
class CostModel:
    """Relative per-event energy costs (demonstration defaults, all overridable)."""

    mac: float = 1.0
    binary_op: float = 0.05
    input_sram_read_byte: float = 0.1
    binweight_sram_read_byte: float = 0.1
    cu_buffer_byte: float = 0.1
    dram_byte: float = 20.0
    static_per_cycle: float = 0.0

    def __post_init__(self):
        if min(self.mac, self.binary_op, self.input_sram_read_byte,
               self.binweight_sram_read_byte, self.cu_buffer_byte,
               self.dram_byte, self.static_per_cycle) < 0:
            raise ConfigError("energy costs must be >= 0")


@dataclass
class LayerStats:
    """Event counters for one layer (one input)."""

    layer: int = 0
    kind: str = "fc"
    cycles: int = 0
    macs_total: int = 0
    macs_executed: int = 0
    macs_skipped: int = 0
    binary_ops: int = 0
    elements_evaluated: int = 0
    elements_skipped: int = 0
    dram_input_bytes: int = 0
    dram_weight_payload_bytes: int = 0
    dram_bitmap_bytes: int = 0
    dram_meta_bytes: int = 0
    dram_output_bytes: int = 0
    input_sram_read_bytes: int = 0
    binweight_sram_read_bytes: int = 0
    cu_buffer_read_bytes: int = 0
    cu_buffer_write_bytes: int = 0

    @property
    def dram_read_bytes(self) -> int:
        return (self.dram_input_bytes + self.dram_weight_payload_bytes
                + self.dram_bitmap_bytes + self.dram_meta_bytes)

    @property
    def dram_write_bytes(self) -> int:
        return self.dram_output_bytes

    def add(self, other: "LayerStats"):
        for f in fields(self):
            if f.name in ("layer", "kind"):
                continue
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))


@dataclass
class RunStats:
    """Per-layer and aggregate counters of one simulation run."""

    layers: list = field(default_factory=list)
    predictor_on: bool = True
    num_inputs: int = 0
    model_hash: str = ""
    energy: dict = field(default_factory=dict)

    def totals(self) -> LayerStats:
        total = LayerStats(layer=-1, kind="total")
        for layer in self.layers:
            total.add(layer)
        return total

    @property
    def cycles(self) -> int:
        return self.totals().cycles


@dataclass
class SchedEvent:
    """One scheduled unit occupancy: [start, end) on a CU or binCU."""

    kind: str
    unit: int
    neuron: int
    pos: int
    start: int
    end: int


@dataclass
class LayerSchedule:
    cycles: int
    stats: LayerStats
    events: list


class _DramPipe:
    """Shared fixed-latency bandwidth pipe, burst-quantized."""

    def __init__(self, cfg: DramConfig):
        self.cfg = cfg
        self.next_free = 0

    def request(self, nbytes: int, t: int) -> int:
        if nbytes <= 0:
            return t
        quantized = math.ceil(nbytes / self.cfg.burst_bytes) * self.cfg.burst_bytes
        xfer = int(math.ceil(quantized / self.cfg.bandwidth_bytes_per_cycle))
        start = max(t, self.next_free)
        self.next_free = start + xfer
        return start + xfer + self.cfg.latency_cycles


def _row_layout(k: int):
    """Byte layout of one member row: sign bits then 7-bit magnitudes, one bitstream."""
    bitmap_bytes = math.ceil(k / 8)
    row_bytes = math.ceil(8 * k / 8)  # == k: the packing never exceeds the 8-bit baseline
    payload_bytes = row_bytes - bitmap_bytes
    return bitmap_bytes, payload_bytes, row_bytes


PROXY_META_BYTES = 6   # idx u32 + cluster size u16
MEMBER_META_BYTES = 4  # idx u32


def schedule_layer(layer: LayerDesc, plan: ClusterPlan, prediction,
                   config: AccelConfig, predictor_on: bool = True,
                   trace: bool = True) -> LayerSchedule:
    """Event-driven schedule of one layer for one input.

    prediction is the LayerPrediction for this layer (may be None when
    predictor_on is False). Returns the layer makespan in cycles, the
    event counters, and (optionally) the unit occupancy trace.
    """
    k = layer.k
    if prediction is not None:
        n_out, n_pos = prediction.skipped.shape
    else:
        n_out, n_pos = layer.n_out, layer.n_positions
    stats = LayerStats(kind=layer.kind)
    events: list = []
    if n_out == 0 or n_pos == 0:
        return LayerSchedule(0, stats, events)

    bitmap_bytes, payload_bytes, row_bytes = _row_layout(k)
    if row_bytes + PROXY_META_BYTES > config.cu_buffer_bytes:
        raise ConfigError(
            f"weight row of {row_bytes} bytes does not fit the {config.cu_buffer_bytes}-byte CU buffer"
        )
    if bitmap_bytes > config.binweight_sram_bytes or bitmap_bytes > config.bincu_buffer_bytes:
        raise ConfigError("binary weight row does not fit the binWeight SRAM / binCU buffer")

    is_member = np.zeros(n_out, dtype=bool)
    members_of = {}
    for proxy, members in zip(plan.proxies, plan.members):
        members_of[proxy] = members
        for m in members:
            is_member[m] = True

    # predictor_on selects the serialized layout (proxy/member tables with
    # index fields and sign-stripped member rows); the baseline accelerator
    # reads plain 8-bit rows, which keeps predictor-off runs invariant to
    # the cluster partition.
    active = predictor_on and prediction is not None
    if active:
        skipped = prediction.skipped
        consulted = prediction.consulted
        gated = prediction.predicted      # enabled members under the runtime threshold
    else:
        skipped = np.zeros((n_out, n_pos), dtype=bool)
        consulted = np.zeros((n_out, n_pos), dtype=bool)
        gated = np.zeros((n_out, n_pos), dtype=bool)

    enabled_neuron = gated.any(axis=1)

    # ---- accounting ---------------------------------------------------
    evaluated = ~skipped
    stats.macs_total = n_out * n_pos * k
    stats.macs_skipped = int(skipped.sum()) * k
    stats.macs_executed = stats.macs_total - stats.macs_skipped
    stats.binary_ops = int(consulted.sum()) * k
    stats.elements_skipped = int(skipped.sum())
    stats.elements_evaluated = int(evaluated.sum())
    stats.dram_input_bytes = layer.in_size
    stats.dram_output_bytes = n_out * n_pos
    fetched = evaluated.any(axis=1)       # weight payload read once per neuron per layer
    payload_of = {}
    for nrn in range(n_out):
        if not predictor_on:
            payload_of[nrn] = row_bytes
            stats.dram_weight_payload_bytes += row_bytes
        elif is_member[nrn]:
            stats.dram_meta_bytes += MEMBER_META_BYTES
            if enabled_neuron[nrn]:
                stats.dram_bitmap_bytes += bitmap_bytes
                payload_of[nrn] = payload_bytes + MEMBER_META_BYTES
            else:
                payload_of[nrn] = row_bytes + MEMBER_META_BYTES
            if fetched[nrn]:
                stats.dram_weight_payload_bytes += payload_of[nrn] - MEMBER_META_BYTES
        else:
            stats.dram_meta_bytes += PROXY_META_BYTES
            payload_of[nrn] = row_bytes + PROXY_META_BYTES
            stats.dram_weight_payload_bytes += row_bytes
    stats.input_sram_read_bytes = stats.macs_executed + math.ceil(stats.binary_ops / 8)
    stats.binweight_sram_read_bytes = math.ceil(stats.binary_ops / 8)
    stats.cu_buffer_read_bytes = stats.macs_executed
    stats.cu_buffer_write_bytes = stats.dram_weight_payload_bytes

    # ---- timing -------------------------------------------------------
    pipe = _DramPipe(config.dram)
    block = config.input_block_bytes or min(layer.in_size, config.input_sram_bytes)
    t = 0
    remaining = layer.in_size
    while remaining > 0:
        t = pipe.request(min(block, remaining), t)
        remaining -= block
    input_ready = t
    bitmap_ready = input_ready
    if active and stats.dram_bitmap_bytes:
        bitmap_ready = pipe.request(stats.dram_bitmap_bytes, input_ready)

    compute_cycles = math.ceil(k / config.cu_width)
    bin_cycles = math.ceil(k / config.bincu_width)

    # Work items in position-major container order: proxies by table order,
    # members grouped by cluster.
    proxy_queue = []     # free low-priority items
    static_members = []  # free member-priority items
    locked = set()
    for pos in range(n_pos):
        for proxy in plan.proxies:
            proxy_queue.append((proxy, pos))
    member_order = [m for members in plan.members for m in members]
    for pos in range(n_pos):
        for m in member_order:
            if active and gated[m, pos]:
                locked.add((m, pos))
            elif not skipped[m, pos]:
                static_members.append((m, pos))

    proxy_queue = deque(proxy_queue)
    static_members = deque(static_members)
    fifo = deque()
    pending_unlock = deque()
    bin_queue = deque()

    idle_cus = list(range(config.num_cus))
    idle_bincus = list(range(config.num_bincus))
    heapq.heapify(idle_cus)
    heapq.heapify(idle_bincus)

    heap = []  # (time, seq, kind, payload)
    seq = 0

    def push(time, kind, payload):
        nonlocal seq
        heapq.heappush(heap, (time, seq, kind, payload))
        seq += 1

    fetched_at = {}

    def fifo_push(item):
        if len(fifo) < config.member_fifo_entries:
            fifo.append(item)
        else:
            pending_unlock.append(item)

    last_time = input_ready

    def assign_cu(now):
        nonlocal last_time
        while idle_cus and (fifo or static_members or proxy_queue):
            if fifo:
                nrn, pos = fifo.popleft()
                if pending_unlock:
                    fifo.append(pending_unlock.popleft())
            elif static_members:
                nrn, pos = static_members.popleft()
            else:
                nrn, pos = proxy_queue.popleft()
            cu = heapq.heappop(idle_cus)
            if nrn in fetched_at:
                ready = max(now, fetched_at[nrn])
            else:
                ready = pipe.request(payload_of[nrn], now)
                fetched_at[nrn] = ready
            start = max(now, ready, input_ready)
            end = start + compute_cycles
            if trace:
                events.append(SchedEvent("cu", cu, nrn, pos, start, end))
            push(end, "cu_done", (cu, nrn, pos))
            last_time = max(last_time, end)

    def assign_bincu(now):
        nonlocal last_time
        while idle_bincus and bin_queue:
            nrn, pos = bin_queue.popleft()
            unit = heapq.heappop(idle_bincus)
            start = max(now, bitmap_ready)
            end = start + bin_cycles
            if trace:
                events.append(SchedEvent("bincu", unit, nrn, pos, start, end))
            push(end, "bin_done", (unit, nrn, pos))
            last_time = max(last_time, end)

    assign_cu(0)
    while heap:
        now, _, kind, payload = heapq.heappop(heap)
        if kind == "cu_done":
            cu, nrn, pos = payload
            heapq.heappush(idle_cus, cu)
            if active and not is_member[nrn]:
                # Proxy element finished: resolve its gated members at this
                # position. Consulted members go through a binCU (the proxy
                # voted zero); the rest unlock for base evaluation directly.
                for m in members_of.get(nrn, ()):
                    if (m, pos) not in locked:
                        continue
                    locked.discard((m, pos))
                    if consulted[m, pos]:
                        bin_queue.append((m, pos))
                    else:
                        fifo_push((m, pos))
            assign_bincu(now)
            assign_cu(now)
        elif kind == "bin_done":
            unit, nrn, pos = payload
            heapq.heappush(idle_bincus, unit)
            if not skipped[nrn, pos]:
                fifo_push((nrn, pos))
            assign_bincu(now)
            assign_cu(now)

    # Layer output (including zero-writes for skipped elements) drains last.
    end_time = pipe.request(stats.dram_output_bytes, last_time)
    stats.cycles = end_time
    return LayerSchedule(end_time, stats, events)


def simulate(model: QuantModel, inputs, config: AccelConfig, cost: CostModel,
              predictor_on: bool = True, clusters=None, params_table=None,
              runtime_config: Optional[HybridConfig] = None,
              model_hash: str = "") -> RunStats:
    """Simulate a batch of inputs; returns accumulated per-layer RunStats.

    With predictor_on, the hybrid predictions drive skipping and binary
    traffic; with predictor_on=False the same container ordering is used
    but every element is evaluated and no binary events occur. Single
    threaded and deterministic; independent simulations can run in
    parallel processes.
    """
    xs = np.asarray(inputs, dtype=np.int8)
    if xs.ndim == len(model.input_shape):
        xs = xs[None]
    if clusters is None:
        clusters = [ClusterPlan.all_singletons(l.n_out) for l in model.layers]
    if predictor_on and params_table is None:
        raise ConfigError("predictor-on simulation needs calibrated parameters")
    if runtime_config is None:
        runtime_config = HybridConfig(oracle=False)

    run = RunStats(predictor_on=predictor_on, num_inputs=xs.shape[0], model_hash=model_hash)
    run.layers = [LayerStats(layer=i, kind=l.kind) for i, l in enumerate(model.layers)]
    for x in xs:
        if predictor_on:
            hybrid = hybrid_forward(model, clusters, params_table, x, runtime_config)
        else:
            hybrid = None
        for li, layer in enumerate(model.layers):
            prediction = hybrid.layers[li] if hybrid is not None else None
            sched = schedule_layer(layer, clusters[li], prediction, config,
                                   predictor_on=predictor_on, trace=False)
            run.layers[li].add(sched.stats)
    run.energy = energy_report(run, cost)
    return run


def energy_report(stats: RunStats, cost: CostModel) -> dict:
    """Per-component energy: sum(events * unit cost) + static * cycles.

    The predictor's own hardware share (binary ops + binWeight SRAM) is
    reported separately so its overhead stays visible.
    """
    total = stats.totals()
    components = {
        "mac": total.macs_executed * cost.mac,
        "binary_op": total.binary_ops * cost.binary_op,
        "input_sram": total.input_sram_read_bytes * cost.input_sram_read_byte,
        "binweight_sram": total.binweight_sram_read_bytes * cost.binweight_sram_read_byte,
        "cu_buffer": (total.cu_buffer_read_bytes + total.cu_buffer_write_bytes) * cost.cu_buffer_byte,
        "dram": (total.dram_read_bytes + total.dram_write_bytes) * cost.dram_byte,
        "static": total.cycles * cost.static_per_cycle,
    }
    dynamic = sum(v for k, v in components.items() if k != "static")
    components["dynamic_total"] = dynamic
    components["total"] = dynamic + components["static"]
    components["predictor_share"] = components["binary_op"] + components["binweight_sram"]
    return components


_RUNSTATS_SCALARS = ("predictor_on", "num_inputs", "model_hash")


def run_stats_to_records(stats: RunStats) -> list:
    """Stable-field-name records: one per layer, then totals, then the run header."""
    records = []
    for layer in stats.layers + [stats.totals()]:
        rec = {f.name: getattr(layer, f.name) for f in fields(layer)}
        rec["dram_read_bytes"] = layer.dram_read_bytes
        rec["dram_write_bytes"] = layer.dram_write_bytes
        rec["record"] = "layer" if layer.layer >= 0 else "totals"
        records.append(rec)
    header = {name: getattr(stats, name) for name in _RUNSTATS_SCALARS}
    header["record"] = "run"
    header["energy"] = stats.energy
    records.append(header)
    return records


def run_stats_to_jsonl(stats: RunStats) -> str:
    return "\n".join(json.dumps(rec, sort_keys=True) for rec in run_stats_to_records(stats)) + "\n"


def run_stats_from_jsonl(text: str) -> RunStats:
    stats = RunStats()
    layer_fields = {f.name for f in fields(LayerStats)}
    for line in text.splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        tag = rec.pop("record")
        if tag == "layer":
            stats.layers.append(
                LayerStats(**{k: v for k, v in rec.items() if k in layer_fields})
            )
        elif tag == "run":
            stats.energy = rec.get("energy", {})
            for name in _RUNSTATS_SCALARS:
                setattr(stats, name, rec[name])
    return stats
