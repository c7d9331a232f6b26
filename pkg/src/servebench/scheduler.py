"""Two-tier benchmark-job scheduling and its discrete-event simulator.

Tier 1 is placement: the leader sends each new job to a worker, either
round-robin or queue-aware (least total queued seconds, ties to the lowest
worker id). Tier 2 is per-worker ordering: FCFS or shortest-job-first over the
not-yet-started queue; the running job is never preempted. Job completion time
(JCT) is completion minus submission, and policies are compared by mean JCT
over a shared trace.

Processing times are taken as known from each job's estimated duration;
stochastic-duration scheduling is out of scope.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import TraceError

POLICIES = {
    "rr+fcfs": ("round_robin", "fcfs"),
    "rr+sjf": ("round_robin", "sjf"),
    "qa+sjf": ("queue_aware", "sjf"),
    "qa+fcfs": ("queue_aware", "fcfs"),
}


@dataclass(frozen=True)
class SchedulerPolicy:
    lb: str = "queue_aware"   # round_robin | queue_aware
    order: str = "sjf"        # fcfs | sjf

    def __post_init__(self):
        if self.lb not in ("round_robin", "queue_aware"):
            raise ValueError(f"unknown load balancer {self.lb!r}")
        if self.order not in ("fcfs", "sjf"):
            raise ValueError(f"unknown queue order {self.order!r}")

    @classmethod
    def parse(cls, name: str) -> "SchedulerPolicy":
        try:
            lb, order = POLICIES[name.lower()]
        except KeyError:
            raise ValueError(f"unknown policy {name!r} (one of {sorted(POLICIES)})") from None
        return cls(lb, order)

    @property
    def name(self) -> str:
        return f"{'qa' if self.lb == 'queue_aware' else 'rr'}+{self.order}"


@dataclass
class SchedJob:
    job_id: str
    submit_time: float
    t_proc: float            # known processing seconds (from estimated_duration)
    worker: int | None = None
    start_time: float | None = None
    completion_time: float | None = None

    @property
    def jct(self) -> float:
        return self.completion_time - self.submit_time


@dataclass
class WorkerView:
    """Leader-side picture of one worker, as published via heartbeats."""
    worker_id: int
    queue_seconds: float = 0.0
    alive: bool = True


def place_job(workers: list[WorkerView], lb: str, rr_cursor: int = 0) -> tuple[int, int]:
    """Pick a worker for a new job; returns (worker_id, next_rr_cursor).

    queue_aware: least queue_seconds, ties to the lowest worker id.
    round_robin: cyclic over live workers.
    """
    live = [w for w in workers if w.alive]
    if not live:
        raise ValueError("no live workers")
    if lb == "queue_aware":
        chosen = min(live, key=lambda w: (w.queue_seconds, w.worker_id))
        return chosen.worker_id, rr_cursor
    ordered = sorted(live, key=lambda w: w.worker_id)
    chosen = ordered[rr_cursor % len(ordered)]
    return chosen.worker_id, rr_cursor + 1


def order_queue(queue: list[SchedJob], order: str) -> list[SchedJob]:
    """Reorder not-yet-started jobs; sjf ascends by processing time with
    submit-time then job-id tie breaks, fcfs keeps submission order."""
    if order == "sjf":
        return sorted(queue, key=lambda j: (j.t_proc, j.submit_time, j.job_id))
    return sorted(queue, key=lambda j: (j.submit_time, j.job_id))


@dataclass
class SimResult:
    policy: str
    jobs: list[SchedJob]
    total_jct: float
    mean_jct: float
    trace: list[tuple[float, str, str]] = field(default_factory=list)  # (t, event, job_id)


def schedule_simulate(jobs: list[SchedJob], num_workers: int,
                      policy: SchedulerPolicy) -> SimResult:
    """Deterministic discrete-event simulation of placement plus per-worker
    ordering. Placement happens at submission using the live queue picture;
    workers run one job at a time, non-preemptively, picking the next job per
    the ordering policy whenever they go idle."""
    jobs = [SchedJob(j.job_id, j.submit_time, j.t_proc) for j in jobs]
    submit_order = sorted(jobs, key=lambda j: (j.submit_time, j.job_id))

    queues: list[list[SchedJob]] = [[] for _ in range(num_workers)]
    busy_until = [0.0] * num_workers
    running: list[SchedJob | None] = [None] * num_workers
    rr_cursor = 0
    trace: list[tuple[float, str, str]] = []
    events: list[tuple[float, int, str, int]] = []  # (time, seq, kind, payload)
    seq = 0

    def push(t: float, kind: str, payload: int):
        nonlocal seq
        heapq.heappush(events, (t, seq, kind, payload))
        seq += 1

    def queue_seconds(w: int, now: float) -> float:
        remaining = max(0.0, busy_until[w] - now) if running[w] is not None else 0.0
        return remaining + sum(j.t_proc for j in queues[w])

    def maybe_start(w: int, now: float):
        if running[w] is not None or not queues[w]:
            return
        queues[w][:] = order_queue(queues[w], policy.order)
        job = queues[w].pop(0)
        job.start_time = now
        job.completion_time = now + job.t_proc
        running[w] = job
        busy_until[w] = job.completion_time
        trace.append((now, "start", job.job_id))
        push(job.completion_time, "finish", w)

    for i, job in enumerate(submit_order):
        push(job.submit_time, "submit", i)

    # Events sharing a timestamp are handled as one scheduling boundary:
    # finishes free workers, then every simultaneous submission is placed,
    # and only then do idle workers pick their next job (so the per-worker
    # reorder sees the whole queue).
    while events:
        t = events[0][0]
        batch = []
        while events and events[0][0] == t:
            batch.append(heapq.heappop(events))
        touched = set()
        for _, _, kind, payload in batch:
            if kind == "finish":
                w = payload
                trace.append((t, "finish", running[w].job_id))
                running[w] = None
                touched.add(w)
        for _, _, kind, payload in batch:
            if kind == "submit":
                job = submit_order[payload]
                views = [WorkerView(w, queue_seconds(w, t)) for w in range(num_workers)]
                chosen, rr_cursor = place_job(views, policy.lb, rr_cursor)
                job.worker = chosen
                queues[chosen].append(job)
                trace.append((t, f"place@{chosen}", job.job_id))
                touched.add(chosen)
        for w in sorted(touched):
            maybe_start(w, t)

    total = sum(j.jct for j in jobs)
    return SimResult(policy.name, jobs, total, total / len(jobs), trace)


def brute_force_best_mean_jct(t_procs: list[float]) -> float:
    """Minimum mean JCT over every execution order on one worker, all jobs
    submitted at t=0. Independent oracle for the SJF optimality property."""
    import itertools

    n = len(t_procs)
    t = np.asarray(t_procs, dtype=float)
    # completion of the i-th executed job is the prefix sum, so the total JCT
    # of an order is sum over positions of (n - position) * t[job]
    weights = np.arange(n, 0, -1, dtype=float)
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
    totals = t[perms] @ weights
    return float(totals.min()) / n


def generate_jobs(n: int, proc_dist: str, arrival_rate: float | None,
                  seed: int) -> list[SchedJob]:
    """Random job trace: processing times from `exp:MEAN` or `pareto:ALPHA[:SCALE]`,
    submissions poisson at arrival_rate (or all at t=0 when rate is None)."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 9000])))
    kind, _, args = proc_dist.partition(":")
    if kind == "exp":
        mean = float(args) if args else 60.0
        procs = rng.exponential(mean, size=n)
    elif kind == "pareto":
        parts = args.split(":") if args else ["1.5"]
        alpha = float(parts[0])
        scale = float(parts[1]) if len(parts) > 1 else 20.0
        procs = scale * (1.0 + rng.pareto(alpha, size=n))
    else:
        raise ValueError(f"unknown processing-time distribution {proc_dist!r}")
    procs = np.maximum(procs, 1e-3)
    if arrival_rate is None:
        submits = np.zeros(n)
    else:
        submits = np.cumsum(rng.exponential(1.0 / arrival_rate, size=n))
    return [SchedJob(f"job-{i:04d}", float(submits[i]), float(procs[i]))
            for i in range(n)]


def write_trace(jobs: list[SchedJob], path: str | Path):
    """job_id submit_time processing_time, one job per line."""
    with open(path, "w") as f:
        f.write("# job_id submit_time t_proc\n")
        for j in jobs:
            f.write(f"{j.job_id} {j.submit_time!r} {j.t_proc!r}\n")


def parse_trace(path: str | Path) -> list[SchedJob]:
    jobs = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise TraceError(f"{path}:{lineno}: expected 'job_id submit_time t_proc', got {line!r}")
            try:
                jobs.append(SchedJob(parts[0], float(parts[1]), float(parts[2])))
            except ValueError:
                raise TraceError(f"{path}:{lineno}: bad number in {line!r}") from None
    if not jobs:
        raise TraceError(f"{path}: empty trace")
    return jobs


def compare_policies(jobs: list[SchedJob], num_workers: int,
                     policies: list[str] = ("rr+fcfs", "rr+sjf", "qa+sjf")) -> dict[str, SimResult]:
    """Run each policy on the same trace; baseline for speedups is rr+fcfs."""
    return {name: schedule_simulate(jobs, num_workers, SchedulerPolicy.parse(name))
            for name in policies}
