"""Follower worker: pulls dispatches via heartbeats, runs one job at a time.

The executor thread drains a local queue serially (benchmarks need the machine
to themselves), reordering the not-yet-started queue by the leader's policy
before each start. The heartbeat thread publishes total queued seconds so the
leader's queue-aware placement has a live picture.
"""

from __future__ import annotations

import logging
import threading
import time

from ..harness import run_from_spec
from ..jobspec import parse_job_doc
from . import protocol
from .protocol import ProtocolError, message

log = logging.getLogger(__name__)


class Follower:
    def __init__(self, leader_addr: str, worker_id: str, *, catalog=None,
                 repo_root=None, request_timeout: float = 10.0):
        self.leader_addr = leader_addr
        self.worker_id = worker_id
        self.catalog = catalog
        self.repo_root = repo_root
        self.request_timeout = request_timeout
        self.heartbeat_interval = 2.0
        self.order_policy = "sjf"
        self._lock = threading.Lock()
        self._queue: list[dict] = []          # DISPATCH messages, unstarted
        self._known_job_ids: set[str] = set() # dedup against re-delivery
        self._running_job_id: str | None = None
        self._running_started: float | None = None
        self._running_estimate: float = 0.0
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []

    def _send(self, msg: dict) -> dict:
        return protocol.request(self.leader_addr, msg, timeout=self.request_timeout)

    def _register(self):
        reply = self._send(message(protocol.REGISTER, worker_id=self.worker_id))
        self.heartbeat_interval = float(reply.get("heartbeat_interval", 2.0))
        self.order_policy = reply.get("order_policy", "sjf")
        log.info("%s registered with %s (order=%s, heartbeat=%.1fs)",
                 self.worker_id, self.leader_addr, self.order_policy,
                 self.heartbeat_interval)

    def _queue_seconds(self) -> float:
        with self._lock:
            total = sum(d["estimated_duration"] for d in self._queue)
            if self._running_job_id is not None:
                elapsed = time.monotonic() - self._running_started
                total += max(0.0, self._running_estimate - elapsed)
            return total

    def _heartbeat_once(self):
        with self._lock:
            queued_ids = [d["job_id"] for d in self._queue]
            running = self._running_job_id
        reply = self._send(message(
            protocol.HEARTBEAT, worker_id=self.worker_id,
            queue_seconds=self._queue_seconds(),
            running_job_id=running, queued_job_ids=queued_ids))
        for dispatch in reply.get("dispatches", []):
            job_id = dispatch["job_id"]
            with self._lock:
                if job_id in self._known_job_ids:
                    continue  # idempotent: re-delivered DISPATCH
                self._known_job_ids.add(job_id)
                self._queue.append(dispatch)
                log.info("%s accepted %s", self.worker_id, job_id)

    def _heartbeat_loop(self):
        registered = False
        while not self._stop.is_set():
            try:
                if not registered:
                    self._register()
                    registered = True
                self._heartbeat_once()
            except ProtocolError as e:
                log.warning("%s heartbeat failed: %s", self.worker_id, e)
                registered = False  # leader may have restarted; re-register
            self._stop.wait(self.heartbeat_interval)

    def _pop_next(self) -> dict | None:
        with self._lock:
            if not self._queue:
                return None
            if self.order_policy == "sjf":
                # ascending estimated duration, ties by dispatch (submit) order
                self._queue.sort(key=lambda d: (d["estimated_duration"], d["job_id"]))
            dispatch = self._queue.pop(0)
            self._running_job_id = dispatch["job_id"]
            self._running_started = time.monotonic()
            self._running_estimate = dispatch["estimated_duration"]
            return dispatch

    def _report(self, job_id: str, state: str, reason: str | None = None):
        try:
            self._send(message(protocol.STATUS, worker_id=self.worker_id,
                               job_id=job_id, state=state, reason=reason))
        except ProtocolError as e:
            log.warning("%s status %s for %s not delivered: %s",
                        self.worker_id, state, job_id, e)

    def _execute(self, dispatch: dict):
        job_id = dispatch["job_id"]
        try:
            spec = parse_job_doc(dispatch["spec"], self.catalog)
            self._report(job_id, "RUNNING")
            record = run_from_spec(spec, catalog=self.catalog,
                                   repo_root=self.repo_root, job_id=job_id)
            self._report(job_id, "COLLECTING")
            self._send(message(protocol.RESULT, worker_id=self.worker_id,
                               job_id=job_id, record=record.to_doc()))
        except ProtocolError as e:
            log.warning("%s could not deliver result for %s: %s",
                        self.worker_id, job_id, e)
        except Exception as e:
            log.exception("%s job %s failed", self.worker_id, job_id)
            self._report(job_id, "FAILED", f"{type(e).__name__}: {e}")
        finally:
            with self._lock:
                self._running_job_id = None

    def _executor_loop(self):
        while not self._stop.is_set():
            dispatch = self._pop_next()
            if dispatch is None:
                self._stop.wait(0.05)
                continue
            self._execute(dispatch)

    def start(self):
        for target in (self._heartbeat_loop, self._executor_loop):
            t = threading.Thread(target=target, daemon=True)
            t.start()
            self._threads.append(t)

    def stop(self):
        self._stop.set()
        for t in self._threads:
            t.join(timeout=5.0)

    def serve_forever(self):
        self.start()
        try:
            while True:
                time.sleep(3600)
        except KeyboardInterrupt:
            self.stop()
