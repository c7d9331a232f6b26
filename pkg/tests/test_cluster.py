import time

import pytest

from conftest import make_job
from servebench.cluster import Follower, Leader
from servebench.cluster import protocol
from servebench.cluster.leader import LeaderState
from servebench.cluster.protocol import ProtocolError, message, request
from servebench.perfdb import PerfDB
from servebench.scheduler import SchedulerPolicy

STATE_ORDER = ["SUBMITTED", "QUEUED", "RUNNING", "COLLECTING", "DONE"]


class FakeClock:
    def __init__(self):
        self.t = 0.0

    def __call__(self):
        return self.t

    def advance(self, dt):
        self.t += dt


@pytest.fixture
def state(tmp_path):
    clock = FakeClock()
    s = LeaderState(SchedulerPolicy.parse("qa+sjf"), PerfDB(tmp_path / "db"),
                    heartbeat_interval=1.0, dead_after_missed=3, clock=clock)
    return s, clock


class TestLeaderState:
    def test_submit_then_place_on_heartbeat_picture(self, state):
        s, clock = state
        s.register("w1")
        s.heartbeat("w1", 0.0, None, [])
        job_id = s.submit(make_job())
        assert s.job_status(job_id)["state"] == "SUBMITTED"
        s.run_scheduling()
        assert s.job_status(job_id)["state"] == "QUEUED"
        dispatches = s.heartbeat("w1", 0.0, None, [])
        assert [d["job_id"] for d in dispatches] == [job_id]
        assert dispatches[0]["kind"] == protocol.DISPATCH

    def test_queue_aware_placement_over_the_wire(self, state):
        s, clock = state
        s.register("wa")
        s.register("wb")
        s.heartbeat("wa", 100.0, "busy-job", [])  # long queue
        s.heartbeat("wb", 0.0, None, [])
        job_id = s.submit(make_job())
        s.run_scheduling()
        dispatches = s.heartbeat("wb", 0.0, None, [])
        assert [d["job_id"] for d in dispatches] == [job_id]
        assert s.heartbeat("wa", 100.0, "busy-job", []) == []

    def test_consecutive_placements_spread(self, state):
        s, clock = state
        s.register("wa")
        s.register("wb")
        s.heartbeat("wa", 0.0, None, [])
        s.heartbeat("wb", 0.0, None, [])
        ids = [s.submit(make_job()) for _ in range(4)]
        s.run_scheduling()
        assigned = [s.job_status(i)["worker_id"] for i in ids]
        assert assigned.count("wa") == 2 and assigned.count("wb") == 2

    def test_dispatch_redelivered_until_seen(self, state):
        s, clock = state
        s.register("w1")
        s.heartbeat("w1", 0.0, None, [])
        job_id = s.submit(make_job())
        s.run_scheduling()
        first = s.heartbeat("w1", 0.0, None, [])
        second = s.heartbeat("w1", 0.0, None, [])  # still not acknowledged
        assert [d["job_id"] for d in first] == [d["job_id"] for d in second] == [job_id]
        third = s.heartbeat("w1", 10.0, None, [job_id])  # now queued on worker
        assert third == []

    def test_dead_worker_requeues_queued_fails_running(self, state):
        s, clock = state
        s.register("w1")
        s.heartbeat("w1", 0.0, None, [])
        running, queued = s.submit(make_job()), s.submit(make_job())
        s.run_scheduling()
        s.heartbeat("w1", 5.0, None, [running, queued])
        s.status_update("w1", running, "RUNNING", None)
        clock.advance(10.0)  # > 3 heartbeats of 1 s
        s.check_dead()
        assert s.job_status(running)["state"] == "FAILED"
        assert s.job_status(running)["reason"] == "worker lost"
        assert s.job_status(queued)["state"] == "SUBMITTED"
        assert s.job_status(queued)["worker_id"] is None

    def test_requeued_job_placed_on_survivor(self, state):
        s, clock = state
        s.register("w1")
        s.heartbeat("w1", 0.0, None, [])
        job_id = s.submit(make_job())
        s.run_scheduling()
        clock.advance(10.0)
        s.register("w2")
        s.heartbeat("w2", 0.0, None, [])
        s.tick()
        assert s.job_status(job_id)["worker_id"] == "w2"

    def test_duplicate_result_ignored(self, state, tmp_path):
        s, clock = state
        s.register("w1")
        s.heartbeat("w1", 0.0, None, [])
        job_id = s.submit(make_job())
        s.run_scheduling()
        from servebench.harness import run_from_spec
        from servebench.jobspec import parse_job_doc
        record = run_from_spec(parse_job_doc(make_job()), job_id=job_id)
        assert s.ingest_result("w1", job_id, record.to_doc()) is True
        assert s.job_status(job_id)["state"] == "DONE"
        assert s.ingest_result("w1", job_id, record.to_doc()) is False
        assert len(s.perfdb) == 1

    def test_duplicate_status_idempotent(self, state):
        s, clock = state
        s.register("w1")
        s.heartbeat("w1", 0.0, None, [])
        job_id = s.submit(make_job())
        s.run_scheduling()
        s.status_update("w1", job_id, "RUNNING", None)
        s.status_update("w1", job_id, "RUNNING", None)  # re-delivered, no error
        assert s.job_status(job_id)["state"] == "RUNNING"

    def test_submit_validates_spec(self, state):
        s, clock = state
        bad = make_job()
        bad["workload"]["rate"] = -1
        with pytest.raises(Exception, match="rate"):
            s.submit(bad)


def _await(predicate, timeout=20.0, interval=0.02):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(interval)
    return False


@pytest.fixture
def cluster(tmp_path):
    leader = Leader("127.0.0.1:0", policy="qa+sjf", perfdb_root=str(tmp_path / "db"),
                    heartbeat_interval=0.1, scheduling_interval=0.05)
    leader.start()
    followers = []

    def add_follower(worker_id):
        f = Follower(leader.address, worker_id)
        f.heartbeat_interval = 0.1
        f.start()
        followers.append(f)
        return f

    yield leader, add_follower
    for f in followers:
        f.stop()
    leader.stop()


class TestLiveCluster:
    def test_job_walks_the_lifecycle_in_order(self, cluster):
        leader, add_follower = cluster
        add_follower("w1")
        reply = request(leader.address, message(protocol.SUBMIT, spec=make_job()))
        job_id = reply["job_id"]

        observed = []
        def poll():
            st = request(leader.address,
                         message(protocol.QUERY, job_id=job_id))["status"]["state"]
            if not observed or observed[-1] != st:
                observed.append(st)
            return st == "DONE"

        assert _await(poll), f"job stuck; saw {observed}"
        indices = [STATE_ORDER.index(s) for s in observed]
        assert indices == sorted(indices), f"out-of-order states {observed}"
        assert observed[-1] == "DONE"

    def test_result_lands_in_perfdb(self, cluster, tmp_path):
        leader, add_follower = cluster
        add_follower("w1")
        job_id = request(leader.address,
                         message(protocol.SUBMIT, spec=make_job()))["job_id"]
        assert _await(lambda: request(
            leader.address, message(protocol.QUERY, job_id=job_id))["status"]["state"] == "DONE")
        record = leader.state.perfdb.get(job_id)
        assert record.ok_count == 50

    def test_ten_jobs_two_followers_all_done(self, cluster):
        leader, add_follower = cluster
        add_follower("w1")
        add_follower("w2")
        ids = [request(leader.address,
                       message(protocol.SUBMIT, spec=make_job(job_name=f"batch-{i}")))["job_id"]
               for i in range(10)]

        def all_done():
            return all(request(leader.address,
                               message(protocol.QUERY, job_id=i))["status"]["state"] == "DONE"
                       for i in ids)

        assert _await(all_done, timeout=30.0)
        workers = {request(leader.address,
                           message(protocol.QUERY, job_id=i))["status"]["worker_id"]
                   for i in ids}
        assert workers == {"w1", "w2"}  # both followers did work

    def test_unknown_job_query_rejected(self, cluster):
        leader, _ = cluster
        with pytest.raises(ProtocolError, match="unknown job id"):
            request(leader.address, message(protocol.QUERY, job_id="ghost"))

    def test_invalid_submission_rejected(self, cluster):
        leader, _ = cluster
        bad = make_job()
        bad["workload"]["rate"] = -5
        with pytest.raises(ProtocolError, match="rate"):
            request(leader.address, message(protocol.SUBMIT, spec=bad))

    def test_killed_follower_requeues_and_fails_running(self, cluster, echo_server):
        leader, add_follower = cluster
        doomed = add_follower("doomed")
        # a genuinely long-running job (wall clock) plus queued short ones
        long_job = make_job(**{
            "job_name": "long",
            "backend": {"kind": "http", "endpoint": echo_server.endpoint},
            "workload": {"pattern": "closed_loop", "concurrency": 1, "duration": 30.0,
                         "payload": {"synthetic_bytes": 64}},
            "estimated_duration": 30.0,
        })
        long_id = request(leader.address,
                          message(protocol.SUBMIT, spec=long_job))["job_id"]
        assert _await(lambda: request(
            leader.address,
            message(protocol.QUERY, job_id=long_id))["status"]["state"] == "RUNNING")
        short_ids = [request(leader.address,
                             message(protocol.SUBMIT,
                                     spec=make_job(job_name=f"short-{i}")))["job_id"]
                     for i in range(3)]
        assert _await(lambda: all(
            request(leader.address,
                    message(protocol.QUERY, job_id=i))["status"]["state"] == "QUEUED"
            for i in short_ids))

        doomed.stop()  # heartbeats cease; jobs must move
        rescue = add_follower("rescue")

        def short_jobs_done():
            return all(request(leader.address,
                               message(protocol.QUERY, job_id=i))["status"]["state"] == "DONE"
                       for i in short_ids)

        assert _await(short_jobs_done, timeout=30.0)
        long_status = request(leader.address,
                              message(protocol.QUERY, job_id=long_id))["status"]
        assert long_status["state"] == "FAILED"
        assert long_status["reason"] == "worker lost"
        for i in short_ids:
            st = request(leader.address, message(protocol.QUERY, job_id=i))["status"]
            assert st["worker_id"] == "rescue"
