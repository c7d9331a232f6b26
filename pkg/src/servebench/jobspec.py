"""Benchmark job specs: parsing, validation, defaulting, and the job lifecycle.

A job is one YAML document (schema documented in the README). Parsing is
strict: unknown keys are rejected, every constraint violation names the field
and the rule, and a spec that validates will run without further validation
failures. Specs round-trip losslessly through emit_job_spec/parse_job_spec.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import processors
from .errors import SpecSyntaxError, SpecValidationError
from .hardware import HardwareProfile, load_hardware_catalog
from .modelgen import GeneratorParams

JOB_SCHEMA_VERSION = 1

NETWORK_PRESETS = {
    # engineering defaults, overridable per job: (rtt seconds, bandwidth bytes/s)
    "lan": (0.0002, 125e6),
    "wifi": (0.003, 12.5e6),
    "lte": (0.05, 2.5e6),
}

SIM_START_PROFILES = {
    # base_start seconds; fast_start mimics a lightweight server, slow_start a
    # heavyweight one that needs many seconds before the first request
    "fast_start": 0.5,
    "slow_start": 10.0,
}


class _Walker:
    """Strict mapping accessor: typed getters, unknown-key rejection, path-aware errors."""

    def __init__(self, doc, path: str):
        if not isinstance(doc, dict):
            raise SpecValidationError(path or "<root>", "must be a mapping")
        self.doc = doc
        self.path = path
        self.seen: set[str] = set()

    def _p(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def has(self, key: str) -> bool:
        return key in self.doc

    def raw(self, key: str, default=None):
        self.seen.add(key)
        return self.doc.get(key, default)

    def child(self, key: str, required=False) -> "_Walker | None":
        self.seen.add(key)
        if key not in self.doc:
            if required:
                raise SpecValidationError(self._p(key), "required section missing")
            return None
        return _Walker(self.doc[key], self._p(key))

    def str_(self, key: str, default=None, choices=None) -> str | None:
        v = self.raw(key, default)
        if v is None:
            return None
        if not isinstance(v, str):
            raise SpecValidationError(self._p(key), "must be a string")
        if choices and v not in choices:
            raise SpecValidationError(self._p(key), f"must be one of {sorted(choices)}")
        return v

    def num(self, key: str, default=None, *, minimum=None, positive=False,
            required=False) -> float | None:
        v = self.raw(key, default)
        if v is None:
            if required:
                raise SpecValidationError(self._p(key), "required")
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SpecValidationError(self._p(key), "must be a number")
        v = float(v)
        if positive and v <= 0:
            raise SpecValidationError(self._p(key), "must be > 0")
        if minimum is not None and v < minimum:
            raise SpecValidationError(self._p(key), f"must be >= {minimum}")
        return v

    def int_(self, key: str, default=None, *, minimum=None, required=False) -> int | None:
        v = self.raw(key, default)
        if v is None:
            if required:
                raise SpecValidationError(self._p(key), "required")
            return None
        if isinstance(v, bool) or not isinstance(v, int):
            raise SpecValidationError(self._p(key), "must be an integer")
        if minimum is not None and v < minimum:
            raise SpecValidationError(self._p(key), f"must be >= {minimum}")
        return v

    def bool_(self, key: str, default=None) -> bool | None:
        v = self.raw(key, default)
        if v is None:
            return None
        if not isinstance(v, bool):
            raise SpecValidationError(self._p(key), "must be a boolean")
        return v

    def finish(self):
        unknown = set(self.doc) - self.seen
        if unknown:
            where = self.path or "<root>"
            raise SpecValidationError(where, f"unknown keys: {sorted(unknown)}")


@dataclass(frozen=True)
class BatchingSpec:
    mode: str = "static"             # static | dynamic
    batch_size: int = 1
    max_queue_delay: float | None = None  # seconds, dynamic only

    def to_doc(self) -> dict:
        doc = {"mode": self.mode, "batch_size": self.batch_size}
        if self.max_queue_delay is not None:
            doc["max_queue_delay"] = self.max_queue_delay
        return doc


@dataclass(frozen=True)
class NetworkSpec:
    kind: str                # lan | wifi | lte | custom
    rtt: float               # seconds, round trip
    bandwidth: float         # bytes/s, each direction

    def to_doc(self):
        if self.kind == "custom":
            return {"rtt": self.rtt, "bandwidth": self.bandwidth}
        return self.kind


@dataclass(frozen=True)
class SimParams:
    compute_efficiency: float = 0.6
    mem_efficiency: float = 0.75
    fixed_overhead: float = 5e-4     # seconds per batch
    start_profile: str = "fast_start"
    base_start: float | None = None  # overrides the profile when set
    load_bandwidth: float = 1e9      # bytes/s for weight loading at cold start
    response_bytes: int = 256

    def resolved_base_start(self) -> float:
        if self.base_start is not None:
            return self.base_start
        return SIM_START_PROFILES[self.start_profile]

    def to_doc(self) -> dict:
        doc = {
            "compute_efficiency": self.compute_efficiency,
            "mem_efficiency": self.mem_efficiency,
            "fixed_overhead": self.fixed_overhead,
            "start_profile": self.start_profile,
            "load_bandwidth": self.load_bandwidth,
            "response_bytes": self.response_bytes,
        }
        if self.base_start is not None:
            doc["base_start"] = self.base_start
        return doc


@dataclass(frozen=True)
class BackendSpec:
    kind: str = "sim"                # sim | http
    hardware_id: str | None = "G1"   # sim only
    endpoint: str | None = None      # http only
    timeout: float = 10.0            # seconds, http only
    batching: BatchingSpec = field(default_factory=BatchingSpec)
    network: NetworkSpec = field(default_factory=lambda: NetworkSpec("lan", *NETWORK_PRESETS["lan"]))
    numeric_precision: str = "fp32"  # fp32 | fp16
    sim: SimParams = field(default_factory=SimParams)

    def to_doc(self) -> dict:
        doc = {
            "kind": self.kind,
            "batching": self.batching.to_doc(),
            "network": self.network.to_doc(),
            "numeric_precision": self.numeric_precision,
        }
        if self.kind == "sim":
            doc["hardware_id"] = self.hardware_id
            doc["sim"] = self.sim.to_doc()
        else:
            doc["endpoint"] = self.endpoint
            doc["timeout"] = self.timeout
        return doc


@dataclass(frozen=True)
class PayloadSpec:
    synthetic_bytes: int | None = 1024
    dataset_dir: str | None = None

    def to_doc(self) -> dict:
        if self.dataset_dir is not None:
            return {"dataset_dir": self.dataset_dir}
        return {"synthetic_bytes": self.synthetic_bytes}


@dataclass(frozen=True)
class BurstSpec:
    base_rate: float
    peak_rate: float
    period: float
    duty: float  # fraction of each period spent at peak_rate

    def to_doc(self) -> dict:
        return {"base_rate": self.base_rate, "peak_rate": self.peak_rate,
                "period": self.period, "duty": self.duty}


@dataclass(frozen=True)
class WorkloadSpec:
    pattern: str                       # poisson | constant | burst | closed_loop
    rate: float | None = None          # req/s, poisson/constant
    burst: BurstSpec | None = None
    concurrency: int | None = None     # closed_loop
    duration: float | None = None      # exactly one of duration/num_requests
    num_requests: int | None = None
    payload: PayloadSpec = field(default_factory=PayloadSpec)
    seed: int = 0
    replay_file: str | None = None     # overrides pattern with recorded offsets

    def to_doc(self) -> dict:
        doc: dict = {"pattern": self.pattern}
        if self.rate is not None:
            doc["rate"] = self.rate
        if self.burst is not None:
            doc["burst"] = self.burst.to_doc()
        if self.concurrency is not None:
            doc["concurrency"] = self.concurrency
        if self.duration is not None:
            doc["duration"] = self.duration
        if self.num_requests is not None:
            doc["num_requests"] = self.num_requests
        doc["payload"] = self.payload.to_doc()
        doc["seed"] = self.seed
        if self.replay_file is not None:
            doc["replay"] = self.replay_file
        return doc


@dataclass(frozen=True)
class PipelineSpec:
    preprocess: str = "passthrough"
    postprocess: str = "passthrough"
    preprocess_time: float | None = None   # override registry duration, seconds
    postprocess_time: float | None = None

    def resolved_times(self) -> tuple[float, float]:
        pre = self.preprocess_time if self.preprocess_time is not None \
            else processors.PREPROCESSORS[self.preprocess]
        post = self.postprocess_time if self.postprocess_time is not None \
            else processors.POSTPROCESSORS[self.postprocess]
        return pre, post

    def to_doc(self) -> dict:
        doc = {"preprocess": self.preprocess, "postprocess": self.postprocess}
        if self.preprocess_time is not None:
            doc["preprocess_time"] = self.preprocess_time
        if self.postprocess_time is not None:
            doc["postprocess_time"] = self.postprocess_time
        return doc


@dataclass(frozen=True)
class SloSpec:
    latency_p99: float | None = None           # seconds
    budget_per_1k_requests: float | None = None  # USD

    def to_doc(self) -> dict:
        doc = {}
        if self.latency_p99 is not None:
            doc["latency_p99"] = self.latency_p99
        if self.budget_per_1k_requests is not None:
            doc["budget_per_1k_requests"] = self.budget_per_1k_requests
        return doc


@dataclass(frozen=True)
class CollectSpec:
    percentiles: tuple[float, ...] = (0.5, 0.95, 0.99)
    stages: bool = True
    resources: bool = True
    resource_sample_interval: float = 1.0  # seconds
    digest: str = "exact"                  # exact | histogram
    warmup: float = 0.0                    # seconds excluded from digests (opt-in)

    def to_doc(self) -> dict:
        return {
            "percentiles": list(self.percentiles),
            "stages": self.stages,
            "resources": self.resources,
            "resource_sample_interval": self.resource_sample_interval,
            "digest": self.digest,
            "warmup": self.warmup,
        }


@dataclass(frozen=True)
class ModelSource:
    generate: GeneratorParams | None = None
    ref: str | None = None  # repository model id

    def to_doc(self) -> dict:
        if self.ref is not None:
            return {"ref": self.ref}
        return {"generate": self.generate.to_doc()}


@dataclass(frozen=True)
class JobSpec:
    job_name: str
    model: ModelSource
    workload: WorkloadSpec
    user: str = "anonymous"
    backend: BackendSpec = field(default_factory=BackendSpec)
    slo: SloSpec = field(default_factory=SloSpec)
    collect: CollectSpec = field(default_factory=CollectSpec)
    pipeline: PipelineSpec = field(default_factory=PipelineSpec)
    estimated_duration: float = 60.0  # seconds, drives cluster scheduling
    seed: int = 0

    def to_doc(self) -> dict:
        return {
            "schema_version": JOB_SCHEMA_VERSION,
            "job_name": self.job_name,
            "user": self.user,
            "model": self.model.to_doc(),
            "backend": self.backend.to_doc(),
            "workload": self.workload.to_doc(),
            "slo": self.slo.to_doc(),
            "collect": self.collect.to_doc(),
            "pipeline": self.pipeline.to_doc(),
            "estimated_duration": self.estimated_duration,
            "seed": self.seed,
        }


def seed_from_name(job_name: str) -> int:
    """Stable 64-bit default seed so unnamed reruns stay replayable."""
    digest = hashlib.sha256(job_name.encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _parse_batching(w: _Walker | None) -> BatchingSpec:
    if w is None:
        return BatchingSpec()
    mode = w.str_("mode", "static", choices={"static", "dynamic"})
    batch_size = w.int_("batch_size", 1, minimum=1)
    delay = w.num("max_queue_delay", None, minimum=0.0)
    w.finish()
    if mode == "dynamic" and delay is None:
        raise SpecValidationError(f"{w.path}.max_queue_delay", "required when mode=dynamic")
    if mode == "static" and delay is not None:
        raise SpecValidationError(f"{w.path}.max_queue_delay", "only valid when mode=dynamic")
    return BatchingSpec(mode, batch_size, delay)


def _parse_network(parent: _Walker) -> NetworkSpec:
    raw = parent.raw("network", "lan")
    path = f"{parent.path}.network" if parent.path else "network"
    if isinstance(raw, str):
        if raw not in NETWORK_PRESETS:
            raise SpecValidationError(path, f"must be one of {sorted(NETWORK_PRESETS)} or a custom mapping")
        rtt, bw = NETWORK_PRESETS[raw]
        return NetworkSpec(raw, rtt, bw)
    w = _Walker(raw, path)
    rtt = w.num("rtt", required=True, minimum=0.0)
    bw = w.num("bandwidth", required=True, positive=True)
    w.finish()
    return NetworkSpec("custom", rtt, bw)


def _parse_sim_params(w: _Walker | None) -> SimParams:
    if w is None:
        return SimParams()
    ce = w.num("compute_efficiency", SimParams.compute_efficiency, positive=True)
    me = w.num("mem_efficiency", SimParams.mem_efficiency, positive=True)
    if ce > 1.0:
        raise SpecValidationError(f"{w.path}.compute_efficiency", "must be in (0, 1]")
    if me > 1.0:
        raise SpecValidationError(f"{w.path}.mem_efficiency", "must be in (0, 1]")
    overhead = w.num("fixed_overhead", SimParams.fixed_overhead, minimum=0.0)
    profile = w.str_("start_profile", SimParams.start_profile, choices=set(SIM_START_PROFILES))
    base_start = w.num("base_start", None, minimum=0.0)
    load_bw = w.num("load_bandwidth", SimParams.load_bandwidth, positive=True)
    response_bytes = w.int_("response_bytes", SimParams.response_bytes, minimum=0)
    w.finish()
    return SimParams(ce, me, overhead, profile, base_start, load_bw, response_bytes)


def _parse_backend(w: _Walker | None, catalog: list[HardwareProfile]) -> BackendSpec:
    if w is None:
        w = _Walker({}, "backend")
    kind = w.str_("kind", "sim", choices={"sim", "http"})
    batching = _parse_batching(w.child("batching"))
    network = _parse_network(w)
    precision = w.str_("numeric_precision", "fp32", choices={"fp32", "fp16"})
    if kind == "sim":
        hardware_id = w.str_("hardware_id", "G1")
        sim = _parse_sim_params(w.child("sim"))
        w.finish()
        known = {p.id for p in catalog}
        if hardware_id not in known:
            raise SpecValidationError(f"{w.path}.hardware_id",
                                      f"{hardware_id!r} not in catalog (known: {sorted(known)})")
        return BackendSpec(kind, hardware_id, None, 10.0, batching, network, precision, sim)
    endpoint = w.str_("endpoint")
    timeout = w.num("timeout", 10.0, positive=True)
    w.finish()
    if not endpoint:
        raise SpecValidationError(f"{w.path}.endpoint", "required when kind=http")
    return BackendSpec(kind, None, endpoint, timeout, batching, network, precision)


def _parse_payload(w: _Walker | None) -> PayloadSpec:
    if w is None:
        return PayloadSpec()
    synthetic = w.int_("synthetic_bytes", None, minimum=1)
    dataset = w.str_("dataset_dir")
    w.finish()
    if synthetic is not None and dataset is not None:
        raise SpecValidationError(f"{w.path}", "give either synthetic_bytes or dataset_dir, not both")
    if dataset is not None:
        d = Path(dataset)
        if not d.is_dir() or not any(d.iterdir()):
            raise SpecValidationError(f"{w.path}.dataset_dir", f"must be an existing non-empty directory: {dataset}")
        return PayloadSpec(None, dataset)
    return PayloadSpec(synthetic if synthetic is not None else 1024, None)


def _parse_workload(w: _Walker, default_seed: int) -> WorkloadSpec:
    pattern = w.str_("pattern", None, choices={"poisson", "constant", "burst", "closed_loop"})
    if pattern is None:
        raise SpecValidationError(f"{w.path}.pattern", "required")
    rate = w.num("rate", None, positive=True)
    burst = None
    bw_ = w.child("burst")
    if bw_ is not None:
        base = bw_.num("base_rate", required=True, minimum=0.0)
        peak = bw_.num("peak_rate", required=True, positive=True)
        period = bw_.num("period", required=True, positive=True)
        duty = bw_.num("duty", required=True)
        bw_.finish()
        if not (0.0 < duty < 1.0):
            raise SpecValidationError(f"{bw_.path}.duty", "must be in (0, 1)")
        if peak < base:
            raise SpecValidationError(f"{bw_.path}.peak_rate", "must be >= base_rate")
        burst = BurstSpec(base, peak, period, duty)
    concurrency = w.int_("concurrency", None, minimum=1)
    duration = w.num("duration", None, positive=True)
    num_requests = w.int_("num_requests", None, minimum=1)
    payload = _parse_payload(w.child("payload"))
    seed = w.int_("seed", None, minimum=0)
    replay = w.str_("replay")
    w.finish()

    if (duration is None) == (num_requests is None):
        raise SpecValidationError(f"{w.path}", "exactly one of duration/num_requests required")
    if replay is not None:
        if not Path(replay).is_file():
            raise SpecValidationError(f"{w.path}.replay", f"schedule file not found: {replay}")
    elif pattern in ("poisson", "constant"):
        if rate is None:
            raise SpecValidationError(f"{w.path}.rate", f"required for pattern={pattern}")
    elif pattern == "burst":
        if burst is None:
            raise SpecValidationError(f"{w.path}.burst", "required for pattern=burst")
        if rate is not None:
            raise SpecValidationError(f"{w.path}.rate", "not allowed for pattern=burst (use burst rates)")
    elif pattern == "closed_loop":
        if concurrency is None:
            raise SpecValidationError(f"{w.path}.concurrency", "required for pattern=closed_loop")
        if rate is not None:
            raise SpecValidationError(f"{w.path}.rate", "not allowed for pattern=closed_loop")
    return WorkloadSpec(pattern, rate, burst, concurrency, duration, num_requests,
                        payload, seed if seed is not None else default_seed, replay)


def _parse_pipeline(w: _Walker | None) -> PipelineSpec:
    if w is None:
        return PipelineSpec()
    pre = w.str_("preprocess", "passthrough", choices=set(processors.PREPROCESSORS))
    post = w.str_("postprocess", "passthrough", choices=set(processors.POSTPROCESSORS))
    pre_t = w.num("preprocess_time", None, minimum=0.0)
    post_t = w.num("postprocess_time", None, minimum=0.0)
    w.finish()
    return PipelineSpec(pre, post, pre_t, post_t)


def _parse_collect(w: _Walker | None) -> CollectSpec:
    if w is None:
        return CollectSpec()
    raw_pcts = w.raw("percentiles", None)
    if raw_pcts is None:
        pcts = CollectSpec.percentiles
    else:
        if not isinstance(raw_pcts, list) or not raw_pcts:
            raise SpecValidationError(f"{w.path}.percentiles", "must be a non-empty list")
        for q in raw_pcts:
            if isinstance(q, bool) or not isinstance(q, (int, float)) or not (0.0 < q < 1.0):
                raise SpecValidationError(f"{w.path}.percentiles", f"values must be fractions strictly in (0,1); got {q!r}")
        pcts = tuple(float(q) for q in raw_pcts)
    stages = w.bool_("stages", True)
    resources = w.bool_("resources", True)
    interval = w.num("resource_sample_interval", 1.0, positive=True)
    digest = w.str_("digest", "exact", choices={"exact", "histogram"})
    warmup = w.num("warmup", 0.0, minimum=0.0)
    w.finish()
    return CollectSpec(pcts, stages, resources, interval, digest, warmup)


def _parse_slo(w: _Walker | None) -> SloSpec:
    if w is None:
        return SloSpec()
    p99 = w.num("latency_p99", None, positive=True)
    budget = w.num("budget_per_1k_requests", None, minimum=0.0)
    w.finish()
    return SloSpec(p99, budget)


def _parse_model(w: _Walker) -> ModelSource:
    gen = w.raw("generate")
    ref = w.str_("ref")
    w.finish()
    if (gen is None) == (ref is None):
        raise SpecValidationError(f"{w.path}", "exactly one of generate/ref required")
    if ref is not None:
        return ModelSource(ref=ref)
    if not isinstance(gen, dict):
        raise SpecValidationError(f"{w.path}.generate", "must be a mapping of generator params")
    return ModelSource(generate=GeneratorParams.from_doc(gen))


def parse_job_doc(doc, catalog: list[HardwareProfile] | None = None) -> JobSpec:
    """Validate and default a parsed config mapping into a JobSpec."""
    if catalog is None:
        catalog = load_hardware_catalog()
    w = _Walker(doc, "")
    version = w.raw("schema_version", JOB_SCHEMA_VERSION)
    if version != JOB_SCHEMA_VERSION:
        raise SpecValidationError("schema_version", f"must be {JOB_SCHEMA_VERSION}, got {version!r}")
    job_name = w.str_("job_name")
    if not job_name:
        raise SpecValidationError("job_name", "required")
    user = w.str_("user", "anonymous")
    seed = w.int_("seed", None, minimum=0)
    if seed is None:
        seed = seed_from_name(job_name)
    model = _parse_model(w.child("model", required=True))
    backend = _parse_backend(w.child("backend"), catalog)
    workload = _parse_workload(w.child("workload", required=True), seed)
    slo = _parse_slo(w.child("slo"))
    collect = _parse_collect(w.child("collect"))
    pipeline = _parse_pipeline(w.child("pipeline"))
    est = w.num("estimated_duration", None, positive=True)
    w.finish()

    if backend.kind == "http" and workload.payload.dataset_dir is None \
            and workload.payload.synthetic_bytes is None:
        raise SpecValidationError("workload.payload", "required")
    if est is None:
        if workload.duration is not None:
            est = workload.duration
        elif workload.num_requests is not None and workload.rate:
            est = max(1.0, workload.num_requests / workload.rate)
        else:
            est = 60.0
    return JobSpec(job_name, model, workload, user, backend, slo, collect,
                   pipeline, est, seed)


def parse_job_spec(text: str, catalog: list[HardwareProfile] | None = None) -> JobSpec:
    """Parse a YAML job document; syntax errors report their position."""
    try:
        doc = yaml.safe_load(text)
    except yaml.MarkedYAMLError as e:
        mark = e.problem_mark
        raise SpecSyntaxError(str(e.problem or e),
                              None if mark is None else mark.line + 1,
                              None if mark is None else mark.column + 1) from e
    except yaml.YAMLError as e:
        raise SpecSyntaxError(str(e)) from e
    if not isinstance(doc, dict):
        raise SpecSyntaxError("job spec must be a YAML mapping")
    return parse_job_doc(doc, catalog)


def load_job_spec(path: str | Path, catalog: list[HardwareProfile] | None = None) -> JobSpec:
    return parse_job_spec(Path(path).read_text(), catalog)


def emit_job_spec(spec: JobSpec) -> str:
    """Serialize a JobSpec back to YAML; parse(emit(s)) == s for all valid specs."""
    return yaml.safe_dump(spec.to_doc(), sort_keys=True)


class JobState(str, enum.Enum):
    SUBMITTED = "SUBMITTED"
    QUEUED = "QUEUED"
    RUNNING = "RUNNING"
    COLLECTING = "COLLECTING"
    DONE = "DONE"
    FAILED = "FAILED"


_STATE_ORDER = [JobState.SUBMITTED, JobState.QUEUED, JobState.RUNNING,
                JobState.COLLECTING, JobState.DONE]
TERMINAL_STATES = {JobState.DONE, JobState.FAILED}


@dataclass
class JobStatus:
    """Lifecycle record for one job.

    Transitions run forward along SUBMITTED -> QUEUED -> RUNNING -> COLLECTING
    -> DONE; FAILED is reachable from any non-terminal state. The single
    backward transition QUEUED -> SUBMITTED is the requeue path used when a
    worker dies before starting the job.
    """

    job_id: str
    state: JobState = JobState.SUBMITTED
    submitted_at: float | None = None
    started_at: float | None = None
    finished_at: float | None = None
    worker_id: str | None = None
    reason: str | None = None

    def advance(self, new_state: JobState, now: float, *, worker_id: str | None = None,
                reason: str | None = None):
        if self.state in TERMINAL_STATES:
            raise ValueError(f"job {self.job_id}: no transitions out of terminal state {self.state.value}")
        if new_state == JobState.FAILED:
            self.reason = reason or "unspecified failure"
            self.finished_at = now
        elif new_state == JobState.SUBMITTED and self.state == JobState.QUEUED:
            self.worker_id = None  # requeue after worker loss
        else:
            cur = _STATE_ORDER.index(self.state)
            nxt = _STATE_ORDER.index(new_state)
            if nxt != cur + 1:
                raise ValueError(
                    f"job {self.job_id}: illegal transition {self.state.value} -> {new_state.value}")
            if new_state == JobState.RUNNING:
                self.started_at = now
            if new_state == JobState.DONE:
                self.finished_at = now
        if worker_id is not None:
            self.worker_id = worker_id
        self.state = new_state

    def to_doc(self) -> dict:
        return {
            "job_id": self.job_id,
            "state": self.state.value,
            "submitted_at": self.submitted_at,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "worker_id": self.worker_id,
            "reason": self.reason,
        }
