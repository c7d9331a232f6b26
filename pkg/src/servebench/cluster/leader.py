"""Leader: accepts submissions, places jobs on live followers, ingests results.

All placement state lives in LeaderState behind one lock (single-writer);
network handlers and the scheduling loop both funnel through it. Followers
publish queue length via heartbeats and pull their dispatches in the replies,
so the leader never dials out. A follower that misses enough heartbeats is
declared dead: its queued jobs return to SUBMITTED for re-placement and its
running job fails with "worker lost".
"""

from __future__ import annotations

import logging
import threading
import time

from ..errors import ServebenchError
from ..jobspec import JobState, JobStatus, parse_job_doc
from ..perfdb import PerfDB
from ..records import PerfRecord
from ..scheduler import SchedulerPolicy, WorkerView, place_job
from . import protocol
from .protocol import MessageServer, message

log = logging.getLogger(__name__)


class _JobEntry:
    def __init__(self, job_id: str, spec_doc: dict, estimated_duration: float, now: float):
        self.job_id = job_id
        self.spec_doc = spec_doc
        self.estimated_duration = estimated_duration
        self.status = JobStatus(job_id, submitted_at=now)
        self.assigned_worker: str | None = None
        self.dispatch_pending = False  # placed but not yet seen on the worker


class _WorkerInfo:
    def __init__(self, worker_id: str, now: float):
        self.worker_id = worker_id
        self.last_heartbeat = now
        self.queue_seconds = 0.0
        self.alive = True


class LeaderState:
    """Placement and lifecycle bookkeeping; safe to drive from many threads."""

    def __init__(self, policy: SchedulerPolicy, perfdb: PerfDB,
                 heartbeat_interval: float = 2.0, dead_after_missed: int = 3,
                 clock=time.monotonic):
        self.policy = policy
        self.perfdb = perfdb
        self.heartbeat_interval = heartbeat_interval
        self.dead_after_missed = dead_after_missed
        self.clock = clock
        self._lock = threading.RLock()
        self._jobs: dict[str, _JobEntry] = {}
        self._workers: dict[str, _WorkerInfo] = {}
        self._counter = 0
        self._rr_cursor = 0

    def submit(self, spec_doc: dict) -> str:
        spec = parse_job_doc(spec_doc)  # reject invalid submissions at the door
        with self._lock:
            self._counter += 1
            job_id = f"j{self._counter:05d}-{spec.job_name}"
            self._jobs[job_id] = _JobEntry(job_id, spec_doc, spec.estimated_duration,
                                           self.clock())
            return job_id

    def register(self, worker_id: str) -> dict:
        with self._lock:
            self._workers[worker_id] = _WorkerInfo(worker_id, self.clock())
            log.info("worker %s registered", worker_id)
            return {"order_policy": self.policy.order,
                    "heartbeat_interval": self.heartbeat_interval}

    def heartbeat(self, worker_id: str, queue_seconds: float,
                  running_job_id: str | None, queued_job_ids: list[str]) -> list[dict]:
        with self._lock:
            info = self._workers.get(worker_id)
            if info is None:
                raise ServebenchError(f"unregistered worker {worker_id!r}; REGISTER first")
            info.last_heartbeat = self.clock()
            info.queue_seconds = queue_seconds
            info.alive = True
            seen = set(queued_job_ids or [])
            if running_job_id:
                seen.add(running_job_id)
            dispatches = []
            for entry in self._jobs.values():
                if entry.assigned_worker != worker_id:
                    continue
                if entry.job_id in seen:
                    entry.dispatch_pending = False
                elif entry.dispatch_pending:
                    dispatches.append(message(
                        protocol.DISPATCH, job_id=entry.job_id, spec=entry.spec_doc,
                        estimated_duration=entry.estimated_duration))
            return dispatches

    def status_update(self, worker_id: str, job_id: str, state: str, reason: str | None):
        with self._lock:
            entry = self._jobs.get(job_id)
            if entry is None:
                raise ServebenchError(f"unknown job id {job_id!r}")
            target = JobState(state)
            if entry.status.state == target:
                return  # idempotent re-delivery
            if entry.status.state in (JobState.DONE, JobState.FAILED):
                return  # late/duplicate message after terminal state
            entry.status.advance(target, self.clock(), worker_id=worker_id, reason=reason)
            if target != JobState.SUBMITTED:
                entry.dispatch_pending = False

    def ingest_result(self, worker_id: str, job_id: str, record_doc: dict) -> bool:
        """Store a result; duplicate deliveries are ignored. Returns acceptance."""
        with self._lock:
            entry = self._jobs.get(job_id)
            if entry is None:
                raise ServebenchError(f"unknown job id {job_id!r}")
            if entry.status.state in (JobState.DONE, JobState.FAILED):
                return False
            record = PerfRecord.from_doc(record_doc)
            try:
                self.perfdb.append(record)
            except Exception:
                return False  # already stored: duplicate RESULT
            now = self.clock()
            while entry.status.state != JobState.COLLECTING:
                order = [JobState.QUEUED, JobState.RUNNING, JobState.COLLECTING]
                nxt = order[[JobState.SUBMITTED, *order].index(entry.status.state)]
                entry.status.advance(nxt, now, worker_id=worker_id)
            entry.status.advance(JobState.DONE, now, worker_id=worker_id)
            return True

    def job_status(self, job_id: str) -> dict:
        with self._lock:
            entry = self._jobs.get(job_id)
            if entry is None:
                raise ServebenchError(f"unknown job id {job_id!r}")
            return entry.status.to_doc()

    def list_jobs(self) -> list[dict]:
        with self._lock:
            return [e.status.to_doc() for e in self._jobs.values()]

    def _effective_queue_seconds(self, worker_id: str) -> float:
        # heartbeat-published queue plus work placed since that heartbeat
        info = self._workers[worker_id]
        placed = sum(e.estimated_duration for e in self._jobs.values()
                     if e.assigned_worker == worker_id and e.dispatch_pending)
        return info.queue_seconds + placed

    def run_scheduling(self):
        """Place every SUBMITTED job on a live worker (queue-aware or RR)."""
        with self._lock:
            live = [w for w in self._workers.values() if w.alive]
            if not live:
                return
            submitted = sorted(
                (e for e in self._jobs.values() if e.status.state == JobState.SUBMITTED),
                key=lambda e: e.job_id)
            for entry in submitted:
                views = [WorkerView(i, self._effective_queue_seconds(w.worker_id))
                         for i, w in enumerate(sorted(live, key=lambda w: w.worker_id))]
                idx, self._rr_cursor = place_job(views, self.policy.lb, self._rr_cursor)
                worker = sorted(live, key=lambda w: w.worker_id)[idx]
                entry.assigned_worker = worker.worker_id
                entry.dispatch_pending = True
                entry.status.advance(JobState.QUEUED, self.clock(),
                                     worker_id=worker.worker_id)
                log.info("placed %s on %s", entry.job_id, worker.worker_id)

    def check_dead(self):
        """Mark silent workers dead; requeue their queued jobs, fail running ones."""
        with self._lock:
            deadline = self.dead_after_missed * self.heartbeat_interval
            now = self.clock()
            for info in self._workers.values():
                if not info.alive or now - info.last_heartbeat <= deadline:
                    continue
                info.alive = False
                log.warning("worker %s lost (no heartbeat for %.1fs)",
                            info.worker_id, now - info.last_heartbeat)
                for entry in self._jobs.values():
                    if entry.assigned_worker != info.worker_id:
                        continue
                    state = entry.status.state
                    if state == JobState.QUEUED:
                        entry.status.advance(JobState.SUBMITTED, now)
                        entry.assigned_worker = None
                        entry.dispatch_pending = False
                    elif state in (JobState.RUNNING, JobState.COLLECTING):
                        entry.status.advance(JobState.FAILED, now, reason="worker lost")

    def tick(self):
        self.check_dead()
        self.run_scheduling()


class Leader:
    """Network frontend plus the scheduling loop around a LeaderState."""

    def __init__(self, bind: str, policy: str = "qa+sjf", perfdb_root: str = "perfdb",
                 heartbeat_interval: float = 2.0, scheduling_interval: float = 1.0,
                 dead_after_missed: int = 3):
        self.state = LeaderState(SchedulerPolicy.parse(policy), PerfDB(perfdb_root),
                                 heartbeat_interval, dead_after_missed)
        self.scheduling_interval = scheduling_interval
        host, port = protocol.parse_address(bind)
        self.server = MessageServer((host, port), self._dispatch)
        self.address = f"{self.server.server_address[0]}:{self.server.server_address[1]}"
        self._stop = threading.Event()
        self._loop_thread: threading.Thread | None = None

    def _dispatch(self, msg: dict) -> dict:
        kind = msg.get("kind")
        if kind == protocol.SUBMIT:
            return {"job_id": self.state.submit(msg["spec"])}
        if kind == protocol.REGISTER:
            return self.state.register(msg["worker_id"])
        if kind == protocol.HEARTBEAT:
            dispatches = self.state.heartbeat(
                msg["worker_id"], msg.get("queue_seconds", 0.0),
                msg.get("running_job_id"), msg.get("queued_job_ids", []))
            return {"dispatches": dispatches}
        if kind == protocol.STATUS:
            self.state.status_update(msg["worker_id"], msg["job_id"], msg["state"],
                                     msg.get("reason"))
            return {}
        if kind == protocol.RESULT:
            accepted = self.state.ingest_result(msg["worker_id"], msg["job_id"],
                                                msg["record"])
            return {"accepted": accepted}
        if kind == protocol.QUERY:
            return {"status": self.state.job_status(msg["job_id"])}
        if kind == protocol.LIST:
            return {"jobs": self.state.list_jobs()}
        raise ServebenchError(f"unknown message kind {kind!r}")

    def _loop(self):
        while not self._stop.is_set():
            try:
                self.state.tick()
            except Exception:
                log.exception("scheduling tick failed")
            self._stop.wait(self.scheduling_interval)

    def start(self):
        self.server.serve_in_background()
        self._loop_thread = threading.Thread(target=self._loop, daemon=True)
        self._loop_thread.start()
        log.info("leader serving on %s", self.address)

    def stop(self):
        self._stop.set()
        self.server.shutdown()
        self.server.server_close()

    def serve_forever(self):
        self.start()
        try:
            while True:
                time.sleep(3600)
        except KeyboardInterrupt:
            self.stop()
