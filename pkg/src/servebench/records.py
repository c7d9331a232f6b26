"""Per-request records and aggregated job results.

All timestamps are integer picoseconds from job start, so stage durations are
exact: they telescope to the end-to-end latency with no float drift, and
records hash identically across replays.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .digest import LatencyDigest

STAGES = ("preprocess", "transmission", "batching", "inference", "postprocess")


@dataclass
class RequestRecord:
    req_id: int
    scheduled_offset_ps: int
    t_send: int | None = None
    t_preproc_done: int | None = None
    t_arrive_server: int | None = None
    t_enqueue: int | None = None
    t_batch_dispatch: int | None = None
    t_infer_done: int | None = None
    t_postproc_done: int | None = None
    t_response: int | None = None
    batch_id: int | None = None
    status: str = "ok"               # ok | failed
    fail_reason: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def e2e_ps(self) -> int:
        return self.t_response - self.t_send

    def stage_durations_ps(self) -> dict[str, int]:
        """The five stage durations; they partition [t_send, t_response] exactly."""
        uplink = self.t_arrive_server - self.t_preproc_done
        downlink = self.t_response - self.t_postproc_done
        return {
            "preprocess": self.t_preproc_done - self.t_send,
            "transmission": uplink + downlink,
            "batching": self.t_batch_dispatch - self.t_enqueue,
            "inference": self.t_infer_done - self.t_batch_dispatch,
            "postprocess": self.t_postproc_done - self.t_infer_done,
        }

    def to_doc(self) -> dict:
        return {
            "req_id": self.req_id,
            "scheduled_offset_ps": self.scheduled_offset_ps,
            "t_send": self.t_send,
            "t_preproc_done": self.t_preproc_done,
            "t_arrive_server": self.t_arrive_server,
            "t_enqueue": self.t_enqueue,
            "t_batch_dispatch": self.t_batch_dispatch,
            "t_infer_done": self.t_infer_done,
            "t_postproc_done": self.t_postproc_done,
            "t_response": self.t_response,
            "batch_id": self.batch_id,
            "status": self.status,
            "fail_reason": self.fail_reason,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "RequestRecord":
        return cls(**doc)


@dataclass
class ResourceSample:
    t: float            # seconds from job start (window end)
    utilization: float  # busy fraction of the window, in [0, 1]
    mem_used: float     # bytes

    def to_doc(self) -> dict:
        return {"t": self.t, "utilization": self.utilization, "mem_used": self.mem_used}


@dataclass
class PerfRecord:
    """Aggregated result of one benchmark job plus the environment log that
    makes a sim-backend run replayable bit-for-bit."""

    job_id: str
    job_name: str
    scheduled_count: int
    ok_count: int
    failed_count: int
    throughput: float          # ok / (last t_response - first t_send), req/s
    error_rate: float
    cold_start_s: float
    wall_ps: int               # first send to last response
    busy_ps: int               # device busy time (sim); 0 for external backends
    digests: dict[str, LatencyDigest] = field(default_factory=dict)
    percentiles: dict[str, float] = field(default_factory=dict)  # e.g. "p99" -> seconds
    resource_samples: list[ResourceSample] = field(default_factory=list)
    costs: dict | None = None
    env_log: dict = field(default_factory=dict)

    def digest(self, name: str = "e2e") -> LatencyDigest:
        return self.digests[name]

    def mean_utilization(self) -> float | None:
        if self.wall_ps <= 0:
            return None
        return self.busy_ps / self.wall_ps

    def to_doc(self) -> dict:
        return {
            "job_id": self.job_id,
            "job_name": self.job_name,
            "scheduled_count": self.scheduled_count,
            "ok_count": self.ok_count,
            "failed_count": self.failed_count,
            "throughput": self.throughput,
            "error_rate": self.error_rate,
            "cold_start_s": self.cold_start_s,
            "wall_ps": self.wall_ps,
            "busy_ps": self.busy_ps,
            "digests": {k: d.to_doc() for k, d in self.digests.items()},
            "percentiles": self.percentiles,
            "resource_samples": [s.to_doc() for s in self.resource_samples],
            "costs": self.costs,
            "env_log": self.env_log,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "PerfRecord":
        return cls(
            job_id=doc["job_id"],
            job_name=doc["job_name"],
            scheduled_count=doc["scheduled_count"],
            ok_count=doc["ok_count"],
            failed_count=doc["failed_count"],
            throughput=doc["throughput"],
            error_rate=doc["error_rate"],
            cold_start_s=doc["cold_start_s"],
            wall_ps=doc["wall_ps"],
            busy_ps=doc["busy_ps"],
            digests={k: LatencyDigest.from_doc(d) for k, d in doc["digests"].items()},
            percentiles=dict(doc.get("percentiles", {})),
            resource_samples=[ResourceSample(**s) for s in doc.get("resource_samples", [])],
            costs=doc.get("costs"),
            env_log=dict(doc.get("env_log", {})),
        )

    # Wall-clock and identity fields are excluded so two runs of the same
    # seeded spec hash identically while still getting distinct job ids.
    _HASH_EXCLUDED_ENV = ("started_at", "host", "wallclock")

    def content_hash(self) -> str:
        doc = self.to_doc()
        doc.pop("job_id")
        env = dict(doc.get("env_log") or {})
        for k in self._HASH_EXCLUDED_ENV:
            env.pop(k, None)
        doc["env_log"] = env
        blob = json.dumps(doc, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()
