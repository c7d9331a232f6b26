"""Job execution: drive one benchmark end to end and aggregate a PerfRecord.

Simulated backends run in virtual time (deterministic, replayable); HTTP
backends run on the wall clock with an open-loop dispatcher that never blocks
on responses. Every request is stamped at each stage boundary and the stamps
partition the end-to-end interval exactly.
"""

from __future__ import annotations

import concurrent.futures
import platform
import sys
import threading
import time
import uuid
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .digest import LatencyDigest, to_ps
from .errors import ServebenchError
from .hardware import HardwareProfile, resolve_hardware
from .httpbackend import HttpBackend
from .jobspec import JobSpec, parse_job_doc
from .modelgen import ModelDescriptor, generate_model
from .records import STAGES, PerfRecord, RequestRecord
from .repository import ModelRepository
from .simbackend import SendPlan, SimBackend, SimBackendConfig
from .workload import PRNG_ALGORITHM, gen_arrivals, gen_payload, payload_size

DEFAULT_CARBON_INTENSITY = 475.0  # g CO2 per kWh, overridable per run


def resolve_model(spec: JobSpec, repo_root: str | Path | None = None) -> ModelDescriptor:
    if spec.model.generate is not None:
        return generate_model(spec.model.generate)
    repo = ModelRepository(repo_root if repo_root is not None else "models")
    return repo.get(spec.model.ref)


def build_backend(spec: JobSpec, descriptor: ModelDescriptor,
                  catalog=None) -> tuple[SimBackend | HttpBackend, HardwareProfile | None]:
    if spec.backend.kind == "sim":
        hardware = resolve_hardware(spec.backend.hardware_id, catalog)
        cfg = SimBackendConfig.from_spec(spec.backend, hardware, descriptor)
        return SimBackend(cfg), hardware
    return HttpBackend(spec.backend.endpoint, spec.backend.timeout), None


def percentile(digest: LatencyDigest, q: float) -> float:
    """Nearest-rank percentile of a digest, in seconds."""
    return digest.percentile(q)


def _percentile_label(q: float) -> str:
    pct = q * 100.0
    return f"p{pct:g}"


def stage_breakdown(records: list[RequestRecord],
                    mode: str = "exact") -> tuple[dict[str, LatencyDigest], dict[str, float]]:
    """Per-stage digests plus each stage's fraction of the mean e2e latency.

    Stage durations partition [t_send, t_response], so the fractions sum to 1
    up to nothing at all: the sums are exact integers.
    """
    ok = [r for r in records if r.ok]
    if not ok:
        raise ServebenchError("stage breakdown needs at least one ok record")
    digests = {s: LatencyDigest(mode) for s in STAGES}
    stage_sums = dict.fromkeys(STAGES, 0)
    e2e_sum = 0
    for r in ok:
        durations = r.stage_durations_ps()
        for s in STAGES:
            digests[s].add(durations[s])
            stage_sums[s] += durations[s]
        e2e_sum += r.e2e_ps
    fractions = {s: (stage_sums[s] / e2e_sum if e2e_sum else 0.0) for s in STAGES}
    return digests, fractions


def compute_costs(record: PerfRecord, hardware: HardwareProfile,
                  carbon_intensity: float = DEFAULT_CARBON_INTENSITY) -> dict:
    """Energy, CO2 and cloud cost per request.

    mean_power = tdp * mean device utilization; energy_per_req = mean_power *
    wall / n; co2 converts J -> kWh -> grams at the given grid intensity;
    cloud_cost_per_req = hourly_rate / (throughput * 3600) per catalog offer.
    Records without cloud offers omit the cloud section (not zero).
    """
    if record.throughput <= 0:
        raise ServebenchError("cost model needs throughput > 0")
    util = record.mean_utilization() or 0.0
    wall_s = record.wall_ps / 1e12
    mean_power = hardware.tdp_power * util
    energy_per_req = mean_power * wall_s / record.ok_count
    co2_per_req = energy_per_req / 3.6e6 * carbon_intensity
    costs = {
        "mean_power_w": mean_power,
        "energy_per_req_j": energy_per_req,
        "co2_per_req_g": co2_per_req,
        "carbon_intensity_g_per_kwh": carbon_intensity,
    }
    if hardware.cloud_offers:
        costs["cloud"] = [
            {"provider_label": o.provider_label,
             "instance_label": o.instance_label,
             "hourly_rate": o.hourly_rate,
             "usd_per_req": o.hourly_rate / (record.throughput * 3600.0)}
            for o in hardware.cloud_offers
        ]
    return costs


def _build_env_log(spec: JobSpec, *, backend_kind: str, hardware: HardwareProfile | None,
                   descriptor: ModelDescriptor | None,
                   carbon_intensity: float, clock: str) -> dict:
    env = {
        "schema_version": 1,
        "package": "servebench",
        "package_version": __version__,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "prng": PRNG_ALGORITHM,
        "clock": clock,
        "job": spec.to_doc(),
        "seed": spec.seed,
        "backend_kind": backend_kind,
        "warmup_s": spec.collect.warmup,
        "carbon_intensity": carbon_intensity,
        "hardware": hardware.to_doc() if hardware else None,
        "hardware_hash": hardware.content_hash() if hardware else None,
        "model": descriptor.to_doc() if descriptor else None,
        "model_hash": descriptor.content_hash() if descriptor else None,
        "started_at": datetime.now(timezone.utc).isoformat(),
        "host": platform.node(),
    }
    return env


def _run_sim(spec: JobSpec, backend: SimBackend) -> list[RequestRecord]:
    w = spec.workload
    pre_s, post_s = spec.pipeline.resolved_times()
    pre_ps, post_ps = to_ps(pre_s), to_ps(post_s)
    if w.pattern == "closed_loop" and w.replay_file is None:
        return backend.execute_closed_loop(
            w.concurrency,
            num_requests=w.num_requests,
            duration_ps=None if w.duration is None else to_ps(w.duration),
            payload_bytes_of=lambda i: payload_size(w, i),
            preproc_ps=pre_ps, postproc_ps=post_ps)
    schedule = gen_arrivals(w)
    sends = [SendPlan(req_id=i, send_ps=to_ps(t), payload_bytes=payload_size(w, i),
                      preproc_ps=pre_ps, postproc_ps=post_ps)
             for i, t in enumerate(schedule.offsets)]
    return backend.execute_open_loop(sends)


class _WallClock:
    def __init__(self):
        self.base_ns = time.monotonic_ns()

    def now_ps(self) -> int:
        return (time.monotonic_ns() - self.base_ns) * 1000

    def sleep_until_ps(self, target_ps: int):
        # coarse sleep, then a yielding spin: sleep(0) releases the GIL each
        # check so concurrent senders never stall behind a busy-waiter
        target_ns = self.base_ns + target_ps // 1000
        while True:
            delta_ns = target_ns - time.monotonic_ns()
            if delta_ns <= 0:
                return
            if delta_ns > 2_000_000:
                time.sleep((delta_ns - 2_000_000) / 1e9)
            else:
                time.sleep(0)


def _http_cycle(backend: HttpBackend, clock: _WallClock, spec: JobSpec, i: int,
                scheduled_ps: int, pre_s: float, post_s: float,
                wait_for_offset: bool = False) -> RequestRecord:
    if wait_for_offset:
        # the dispatcher hands tasks over a few ms early; the sender itself
        # spins onto the exact offset so pool handoff jitter never shifts t_send
        clock.sleep_until_ps(scheduled_ps)
    rec = RequestRecord(req_id=i, scheduled_offset_ps=scheduled_ps)
    rec.t_send = clock.now_ps()
    if pre_s > 0:
        time.sleep(pre_s)
    rec.t_preproc_done = clock.now_ps()
    # the server round trip is opaque from here: it all lands in "inference"
    rec.t_arrive_server = rec.t_enqueue = rec.t_batch_dispatch = rec.t_preproc_done
    payload, _ = gen_payload(spec.workload, i)
    ok, reason = backend.infer_one(payload)
    rec.t_infer_done = clock.now_ps()
    if not ok:
        rec.status = "failed"
        rec.fail_reason = reason
        return rec
    if post_s > 0:
        time.sleep(post_s)
    rec.t_postproc_done = clock.now_ps()
    rec.t_response = rec.t_postproc_done
    return rec


def _run_http(spec: JobSpec, backend: HttpBackend) -> list[RequestRecord]:
    w = spec.workload
    pre_s, post_s = spec.pipeline.resolved_times()
    clock = _WallClock()

    if w.pattern == "closed_loop" and w.replay_file is None:
        records: dict[int, RequestRecord] = {}
        lock = threading.Lock()
        counter = {"next": 0}
        duration_ps = None if w.duration is None else to_ps(w.duration)

        def worker():
            while True:
                with lock:
                    i = counter["next"]
                    if w.num_requests is not None and i >= w.num_requests:
                        return
                    if duration_ps is not None and clock.now_ps() >= duration_ps:
                        return
                    counter["next"] = i + 1
                rec = _http_cycle(backend, clock, spec, i, clock.now_ps(), pre_s, post_s)
                with lock:
                    records[i] = rec

        threads = [threading.Thread(target=worker) for _ in range(w.concurrency)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        return [records[i] for i in sorted(records)]

    schedule = gen_arrivals(w)
    n_workers = min(128, max(8, len(schedule)))
    pool = concurrent.futures.ThreadPoolExecutor(max_workers=n_workers)
    barrier = threading.Barrier(n_workers + 1)
    for _ in range(n_workers):
        pool.submit(barrier.wait)
    barrier.wait()  # every worker thread exists before the first send

    lead_ps = 5_000_000_000  # hand tasks over 5 ms before their offset
    futures = []
    # open loop: dispatch at the scheduled offset no matter how many responses
    # are outstanding; the pool only does the sending
    for i, offset in enumerate(schedule.offsets):
        target = to_ps(offset)
        clock.sleep_until_ps(max(0, target - lead_ps))
        futures.append(pool.submit(_http_cycle, backend, clock, spec, i, target,
                                   pre_s, post_s, True))
    records = [f.result() for f in futures]
    pool.shutdown()
    return records


def run_job(spec: JobSpec, backend: SimBackend | HttpBackend, *,
            hardware: HardwareProfile | None = None,
            descriptor: ModelDescriptor | None = None,
            carbon_intensity: float = DEFAULT_CARBON_INTENSITY,
            job_id: str | None = None) -> PerfRecord:
    """Execute one job against a started-or-startable backend.

    Raises BackendStartError when the backend cannot start (the caller marks
    the job FAILED); partial request failures end in a DONE record with
    error_rate > 0.
    """
    cold_start = backend.start()
    clock_kind = "virtual-ps" if backend.virtual_time else "wall-ps"
    try:
        if backend.virtual_time:
            records = _run_sim(spec, backend)
        else:
            records = _run_http(spec, backend)
    finally:
        backend.stop()

    ok = [r for r in records if r.ok]
    failed = [r for r in records if not r.ok]
    scheduled = len(records)

    wall_ps = 0
    throughput = 0.0
    if ok:
        first_send = min(r.t_send for r in ok)
        last_response = max(r.t_response for r in ok)
        wall_ps = last_response - first_send
        if wall_ps > 0:
            throughput = len(ok) / (wall_ps / 1e12)

    warmup_ps = to_ps(spec.collect.warmup)
    digest_source = [r for r in ok if r.t_send >= warmup_ps]
    mode = spec.collect.digest
    digests = {"e2e": LatencyDigest(mode)}
    for r in digest_source:
        digests["e2e"].add(r.e2e_ps)
    if spec.collect.stages and digest_source:
        stage_digests, _ = stage_breakdown(digest_source, mode)
        digests.update(stage_digests)

    pcts = {}
    if digests["e2e"].count:
        for q in spec.collect.percentiles:
            pcts[_percentile_label(q)] = digests["e2e"].percentile(q)

    resource_samples = []
    busy_ps = 0
    if backend.virtual_time:
        busy_ps = backend.busy_ps()
        if spec.collect.resources and ok:
            horizon = max(r.t_response for r in ok)
            resource_samples = backend.resource_samples(
                spec.collect.resource_sample_interval, horizon)

    record = PerfRecord(
        job_id=job_id or f"{spec.job_name}-{uuid.uuid4().hex[:12]}",
        job_name=spec.job_name,
        scheduled_count=scheduled,
        ok_count=len(ok),
        failed_count=len(failed),
        throughput=throughput,
        error_rate=len(failed) / scheduled if scheduled else 0.0,
        cold_start_s=cold_start,
        wall_ps=wall_ps,
        busy_ps=busy_ps,
        digests=digests,
        percentiles=pcts,
        resource_samples=resource_samples,
        env_log=_build_env_log(spec, backend_kind=backend.kind, hardware=hardware,
                               descriptor=descriptor, carbon_intensity=carbon_intensity,
                               clock=clock_kind),
    )
    if hardware is not None and throughput > 0:
        record.costs = compute_costs(record, hardware, carbon_intensity)
    return record


def run_from_spec(spec: JobSpec, *, catalog=None, repo_root=None,
                  carbon_intensity: float = DEFAULT_CARBON_INTENSITY,
                  job_id: str | None = None) -> PerfRecord:
    """Resolve model and backend from the spec, then run the job."""
    descriptor = resolve_model(spec, repo_root)
    backend, hardware = build_backend(spec, descriptor, catalog)
    return run_job(spec, backend, hardware=hardware, descriptor=descriptor,
                   carbon_intensity=carbon_intensity, job_id=job_id)


def replay_record(record: PerfRecord) -> PerfRecord:
    """Re-execute a sim-backend job from its environment log.

    Rebuilds the job, hardware, and model purely from the log (not from any
    local catalog or repository), reruns it, and returns the fresh record.
    Callers compare content hashes to check the reproducibility contract.
    """
    env = record.env_log
    if env.get("backend_kind") != "sim":
        raise ServebenchError("only sim-backend records can be replayed deterministically")
    hardware = HardwareProfile.from_doc(env["hardware"])
    descriptor = ModelDescriptor.from_doc(env["model"])
    spec = parse_job_doc(env["job"], catalog=[hardware])
    cfg = SimBackendConfig.from_spec(spec.backend, hardware, descriptor)
    backend = SimBackend(cfg)
    return run_job(spec, backend, hardware=hardware, descriptor=descriptor,
                   carbon_intensity=env.get("carbon_intensity", DEFAULT_CARBON_INTENSITY),
                   job_id=record.job_id + "-replay")
