"""Simulated serving backend.

One virtual device serves batches serially. Inference latency follows a
roofline-consistent law so the simulator is its own ground truth for the
analysis stage:

    t(b) = fixed_overhead + max( b*flops / (e_c * P),
                                 (weights + b*acts) / (e_m * B) )

with P the peak FLOP/s at the selected precision, B the memory bandwidth, and
e_c/e_m efficiency derates. Dynamic batching dispatches when the queue reaches
the size cap or the oldest request has waited out the queue delay, whichever
comes first. Static batching waits for a full batch (the final partial batch
flushes when the arrival stream ends). Network transfers cost rtt/2 plus
bytes/bandwidth per direction; cold start costs base_start plus weight loading.

Everything runs in virtual time (integer picoseconds), so runs are exactly
replayable and take milliseconds of wall clock regardless of simulated length.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass

from .digest import to_ps
from .errors import BackendStartError
from .hardware import HardwareProfile
from .jobspec import BackendSpec, BatchingSpec, NetworkSpec
from .modelgen import ModelDescriptor
from .records import RequestRecord, ResourceSample


def infer_latency(model: ModelDescriptor, hardware: HardwareProfile, batch_size: int, *,
                  precision: str = "fp32", compute_efficiency: float = 0.6,
                  mem_efficiency: float = 0.75, fixed_overhead: float = 5e-4) -> float:
    """Batch inference latency in seconds under the roofline-consistent law."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    peak = hardware.peak_flops(precision)
    compute_s = batch_size * model.flops_per_sample / (compute_efficiency * peak)
    traffic = model.weight_bytes + batch_size * model.activation_bytes_per_sample
    memory_s = traffic / (mem_efficiency * hardware.mem_bandwidth)
    return fixed_overhead + max(compute_s, memory_s)


def batch_bound(model: ModelDescriptor, hardware: HardwareProfile, batch_size: int, *,
                precision: str = "fp32", compute_efficiency: float = 0.6,
                mem_efficiency: float = 0.75) -> str:
    """Which term of the latency law dominates at this batch size."""
    peak = hardware.peak_flops(precision)
    compute_s = batch_size * model.flops_per_sample / (compute_efficiency * peak)
    traffic = model.weight_bytes + batch_size * model.activation_bytes_per_sample
    memory_s = traffic / (mem_efficiency * hardware.mem_bandwidth)
    return "compute" if compute_s >= memory_s else "memory"


def crossover_batch(model: ModelDescriptor, hardware: HardwareProfile, *,
                    precision: str = "fp32", compute_efficiency: float = 0.6,
                    mem_efficiency: float = 0.75) -> float:
    """Batch size where the compute term overtakes the memory term.

    Solves b*f/(e_c*P) = (W + b*a)/(e_m*B); returns inf for models that stay
    memory-bound at every batch size.
    """
    eff_peak = compute_efficiency * hardware.peak_flops(precision)
    eff_bw = mem_efficiency * hardware.mem_bandwidth
    denom = model.flops_per_sample * eff_bw - model.activation_bytes_per_sample * eff_peak
    if denom <= 0:
        return math.inf
    return model.weight_bytes * eff_peak / denom


def cold_start_time(model: ModelDescriptor, base_start: float, load_bandwidth: float) -> float:
    """Seconds from backend launch to readiness: fixed startup plus weight loading."""
    return base_start + model.weight_bytes / load_bandwidth


def one_way_delay(num_bytes: int, network: NetworkSpec) -> float:
    """One direction of a transfer: half the round trip plus serialization."""
    return network.rtt / 2.0 + num_bytes / network.bandwidth


def transfer_times(payload_bytes: int, response_bytes: int,
                   network: NetworkSpec) -> tuple[float, float]:
    """(uplink, downlink) seconds for a request/response pair."""
    return one_way_delay(payload_bytes, network), one_way_delay(response_bytes, network)


def plan_batches(enqueues: list[tuple[int, int]], batching: BatchingSpec) -> list[tuple[int, list[int]]]:
    """Turn a time-ordered (enqueue_ps, req_idx) stream into dispatch events.

    Returns [(formation_ps, [req_idx...])] in formation order. Dynamic mode
    dispatches at the size cap or when the oldest request has waited
    max_queue_delay, whichever first; the batch takes all queued (FIFO, at
    most the cap). Static mode waits for a full batch and flushes the final
    partial batch at the last arrival.
    """
    if any(b[0] < a[0] for a, b in zip(enqueues, enqueues[1:])):
        raise ValueError("enqueues must be time-ordered")
    cap = batching.batch_size
    out: list[tuple[int, list[int]]] = []
    pending: deque[tuple[int, int]] = deque()

    if batching.mode == "static":
        for t, idx in enqueues:
            pending.append((t, idx))
            if len(pending) == cap:
                out.append((t, [i for _, i in pending]))
                pending.clear()
        if pending:
            out.append((enqueues[-1][0], [i for _, i in pending]))
        return out

    delay = to_ps(batching.max_queue_delay)
    for t, idx in enqueues:
        while pending and pending[0][0] + delay < t:
            form_t = pending[0][0] + delay
            members = [pending.popleft()[1] for _ in range(min(cap, len(pending)))]
            out.append((form_t, members))
        pending.append((t, idx))
        if len(pending) == cap:
            out.append((t, [i for _, i in pending]))
            pending.clear()
        while pending and pending[0][0] + delay <= t:
            form_t = pending[0][0] + delay
            members = [pending.popleft()[1] for _ in range(min(cap, len(pending)))]
            out.append((form_t, members))
    while pending:
        form_t = pending[0][0] + delay
        members = [pending.popleft()[1] for _ in range(min(cap, len(pending)))]
        out.append((form_t, members))
    return out


@dataclass(frozen=True)
class SimBackendConfig:
    hardware: HardwareProfile
    model: ModelDescriptor
    batching: BatchingSpec
    network: NetworkSpec
    precision: str = "fp32"
    compute_efficiency: float = 0.6
    mem_efficiency: float = 0.75
    fixed_overhead: float = 5e-4
    base_start: float = 0.5
    load_bandwidth: float = 1e9
    response_bytes: int = 256

    def __post_init__(self):
        if not (0.0 < self.compute_efficiency <= 1.0):
            raise ValueError("compute_efficiency must be in (0, 1]")
        if not (0.0 < self.mem_efficiency <= 1.0):
            raise ValueError("mem_efficiency must be in (0, 1]")
        if self.fixed_overhead < 0:
            raise ValueError("fixed_overhead must be >= 0")

    @classmethod
    def from_spec(cls, backend: BackendSpec, hardware: HardwareProfile,
                  model: ModelDescriptor) -> "SimBackendConfig":
        sim = backend.sim
        return cls(
            hardware=hardware,
            model=model,
            batching=backend.batching,
            network=backend.network,
            precision=backend.numeric_precision,
            compute_efficiency=sim.compute_efficiency,
            mem_efficiency=sim.mem_efficiency,
            fixed_overhead=sim.fixed_overhead,
            base_start=sim.resolved_base_start(),
            load_bandwidth=sim.load_bandwidth,
            response_bytes=sim.response_bytes,
        )


@dataclass
class BatchExec:
    batch_id: int
    start_ps: int
    end_ps: int
    size: int


@dataclass(frozen=True)
class SendPlan:
    """One request the engine should inject: send instant plus per-request costs."""
    req_id: int
    send_ps: int
    payload_bytes: int
    preproc_ps: int
    postproc_ps: int


class SimBackend:
    """Single simulated device with its own queue, batcher, and network path."""

    virtual_time = True
    kind = "sim"

    def __init__(self, config: SimBackendConfig):
        self.config = config
        self.started = False
        self.cold_start_s = 0.0
        self.batches: list[BatchExec] = []

    def start(self) -> float:
        if self.config.model.weight_bytes > self.config.hardware.mem_capacity:
            raise BackendStartError(
                f"model weights ({self.config.model.weight_bytes} B) exceed device memory "
                f"({self.config.hardware.mem_capacity:.0f} B) on {self.config.hardware.id}")
        self.cold_start_s = cold_start_time(
            self.config.model, self.config.base_start, self.config.load_bandwidth)
        self.started = True
        self.batches = []
        return self.cold_start_s

    def stop(self):
        self.started = False

    def _latency_ps(self, batch_size: int) -> int:
        return to_ps(infer_latency(
            self.config.model, self.config.hardware, batch_size,
            precision=self.config.precision,
            compute_efficiency=self.config.compute_efficiency,
            mem_efficiency=self.config.mem_efficiency,
            fixed_overhead=self.config.fixed_overhead))

    def _require_started(self):
        if not self.started:
            raise BackendStartError("infer before start()")

    def execute_open_loop(self, sends: list[SendPlan]) -> list[RequestRecord]:
        """Run a fully pre-scheduled (open-loop) workload through the pipeline."""
        self._require_started()
        cfg = self.config
        records: dict[int, RequestRecord] = {}
        enqueues: list[tuple[int, int]] = []
        for sp in sends:
            uplink = to_ps(one_way_delay(sp.payload_bytes, cfg.network))
            rec = RequestRecord(req_id=sp.req_id, scheduled_offset_ps=sp.send_ps)
            rec.t_send = sp.send_ps
            rec.t_preproc_done = rec.t_send + sp.preproc_ps
            rec.t_arrive_server = rec.t_preproc_done + uplink
            rec.t_enqueue = rec.t_arrive_server
            records[sp.req_id] = rec
            enqueues.append((rec.t_enqueue, sp.req_id))
        enqueues.sort()
        post_by_id = {sp.req_id: sp.postproc_ps for sp in sends}

        device_free = to_ps(self.cold_start_s)
        downlink = to_ps(one_way_delay(cfg.response_bytes, cfg.network))
        for form_ps, members in plan_batches(enqueues, cfg.batching):
            start = max(form_ps, device_free)
            end = start + self._latency_ps(len(members))
            device_free = end
            bid = len(self.batches)
            self.batches.append(BatchExec(bid, start, end, len(members)))
            for req_id in members:
                rec = records[req_id]
                rec.batch_id = bid
                rec.t_batch_dispatch = start
                rec.t_infer_done = end
                rec.t_postproc_done = end + post_by_id[req_id]
                rec.t_response = rec.t_postproc_done + downlink
        return [records[sp.req_id] for sp in sends]

    def execute_closed_loop(self, concurrency: int, *, num_requests: int | None = None,
                            duration_ps: int | None = None, payload_bytes_of=None,
                            preproc_ps: int = 0, postproc_ps: int = 0) -> list[RequestRecord]:
        """Keep exactly `concurrency` requests in flight; each response triggers
        the next send until the stop condition is met."""
        self._require_started()
        if (num_requests is None) == (duration_ps is None):
            raise ValueError("exactly one of num_requests/duration_ps required")
        if payload_bytes_of is None:
            payload_bytes_of = lambda i: 1024
        cfg = self.config
        downlink = to_ps(one_way_delay(cfg.response_bytes, cfg.network))
        delay_ps = to_ps(cfg.batching.max_queue_delay) if cfg.batching.mode == "dynamic" else None
        cap = cfg.batching.batch_size

        records: dict[int, RequestRecord] = {}
        pending: deque[tuple[int, int]] = deque()
        pending_ids: set[int] = set()
        events: list[tuple[int, int, int, int]] = []  # (time, seq, kind, req_id)
        ARRIVE, DEADLINE, RESPONSE = 0, 1, 2
        seq = 0
        issued = 0
        completed = 0
        outstanding_arrivals = 0
        device_free = to_ps(self.cold_start_s)

        def push(t: int, kind: int, req_id: int):
            nonlocal seq
            heapq.heappush(events, (t, seq, kind, req_id))
            seq += 1

        def may_issue(send_ps: int) -> bool:
            if num_requests is not None:
                return issued < num_requests
            return send_ps < duration_ps

        def issue(send_ps: int):
            nonlocal issued, outstanding_arrivals
            rec = RequestRecord(req_id=issued, scheduled_offset_ps=send_ps)
            rec.t_send = send_ps
            rec.t_preproc_done = send_ps + preproc_ps
            uplink = to_ps(one_way_delay(payload_bytes_of(rec.req_id), cfg.network))
            rec.t_arrive_server = rec.t_preproc_done + uplink
            rec.t_enqueue = rec.t_arrive_server
            records[rec.req_id] = rec
            push(rec.t_arrive_server, ARRIVE, rec.req_id)
            issued += 1
            outstanding_arrivals += 1

        def form_batch(form_ps: int, size: int):
            nonlocal device_free
            members = []
            for _ in range(size):
                _, rid = pending.popleft()
                pending_ids.discard(rid)
                members.append(rid)
            start = max(form_ps, device_free)
            end = start + self._latency_ps(len(members))
            device_free = end
            bid = len(self.batches)
            self.batches.append(BatchExec(bid, start, end, len(members)))
            for rid in members:
                rec = records[rid]
                rec.batch_id = bid
                rec.t_batch_dispatch = start
                rec.t_infer_done = end
                rec.t_postproc_done = end + postproc_ps
                rec.t_response = rec.t_postproc_done + downlink
                push(rec.t_response, RESPONSE, rid)

        def flush_if_starved(now: int):
            # Static batching deadlocks once every live request is sitting in a
            # partial batch (closed loop: sends only follow responses). Flush.
            if cfg.batching.mode == "static" and pending and outstanding_arrivals == 0 \
                    and issued - completed == len(pending):
                form_batch(now, len(pending))

        for _ in range(concurrency):
            if may_issue(0):
                issue(0)

        while events:
            t, _, kind, rid = heapq.heappop(events)
            if kind == ARRIVE:
                outstanding_arrivals -= 1
                pending.append((t, rid))
                pending_ids.add(rid)
                if len(pending) >= cap:
                    form_batch(t, cap)
                elif delay_ps is not None:
                    push(t + delay_ps, DEADLINE, rid)
                flush_if_starved(t)
            elif kind == DEADLINE:
                if rid in pending_ids:
                    form_batch(t, min(cap, len(pending)))
            else:  # RESPONSE
                completed += 1
                if may_issue(t):
                    issue(t)
                flush_if_starved(t)
        return [records[i] for i in sorted(records)]

    def resource_samples(self, interval_s: float, horizon_ps: int) -> list[ResourceSample]:
        """Busy fraction and memory footprint per sampling window.

        Utilization of a window is the device-busy overlap divided by the
        window length; memory is resident weights plus the largest in-flight
        batch's activations within the window, capped at device capacity.
        """
        cfg = self.config
        interval_ps = to_ps(interval_s)
        if horizon_ps <= 0:
            return []
        samples = []
        w_start = 0
        while w_start < horizon_ps:
            w_end = min(w_start + interval_ps, horizon_ps)
            width = w_end - w_start
            busy = 0
            peak_act = 0
            for b in self.batches:
                overlap = min(b.end_ps, w_end) - max(b.start_ps, w_start)
                if overlap > 0:
                    busy += overlap
                    peak_act = max(peak_act, b.size * cfg.model.activation_bytes_per_sample)
            mem = min(cfg.model.weight_bytes + peak_act, cfg.hardware.mem_capacity)
            samples.append(ResourceSample(
                t=w_end / 1e12, utilization=busy / width, mem_used=float(mem)))
            w_start = w_end
        return samples

    def busy_ps(self) -> int:
        return sum(b.end_ps - b.start_ps for b in self.batches)
