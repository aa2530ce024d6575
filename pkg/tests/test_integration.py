"""End-to-end behavior over real sockets: model <-> broker <-> worker
round trips, lease-expiry recovery when a worker goes silent, nameserver
discovery, and work sharing across linked brokers."""

import socket
import threading
import time
import uuid

import pytest

from evonas.broker import BrokerServer, connect
from evonas.fitness import EvalConfig
from evonas.nameserver import NameserverServer
from evonas.protocol import ProtocolTimeouts, recv_message, send_message
from evonas.worker import Worker, WorkerConfig

FAST = ProtocolTimeouts(heartbeat_interval_ms=100,
                        heartbeat_misses_to_expire=3)


@pytest.fixture()
def broker():
    server = BrokerServer(("127.0.0.1", 0), timeouts=FAST)
    server.start()
    yield server
    server.stop()


def start_worker(address, worker_id="", **kwargs):
    cfg = WorkerConfig(worker_id=worker_id, broker=address,
                       timeouts=FAST, **kwargs)
    worker = Worker(cfg)
    thread = threading.Thread(target=worker.run, daemon=True)
    thread.start()
    return worker


def model_socket(address):
    sock = connect(address, timeout=10.0)
    sock.settimeout(10.0)
    return sock


def submit(sock, genotype, eval_config=None, task_id=None):
    task_id = task_id or str(uuid.uuid4())
    send_message(sock, {
        "type": "submit_task", "task_id": task_id, "genotype": genotype,
        "eval_config": (eval_config or EvalConfig()).to_wire(),
        "sender_id": "model-test",
    })
    return task_id


def collect_results(sock, n, timeout=15.0):
    results = {}
    deadline = time.monotonic() + timeout
    while len(results) < n:
        assert time.monotonic() < deadline, f"only {len(results)}/{n} results"
        msg = recv_message(sock)
        assert msg is not None, "broker closed the connection"
        if msg["type"] == "task_result":
            results[msg["task_id"]] = msg
    return results


class TestRoundTrip:
    def test_submit_evaluate_result(self, broker):
        worker = start_worker(broker.address)
        with model_socket(broker.address) as sock:
            task_id = submit(sock, "5x5conv2d:64")
            result = collect_results(sock, 1)[task_id]
        worker.stop()
        assert result["fitness"] == pytest.approx(10.0)
        assert result["loss"] == pytest.approx(0.1)
        assert "error" not in result

    def test_many_tasks_one_worker(self, broker):
        worker = start_worker(broker.address)
        with model_socket(broker.address) as sock:
            ids = [submit(sock, "3x3conv2d:16") for _ in range(10)]
            results = collect_results(sock, 10)
        worker.stop()
        assert set(results) == set(ids)
        assert len({r["fitness"] for r in results.values()}) == 1

    def test_invalid_genotype_returns_errored_result(self, broker):
        worker = start_worker(broker.address)
        with model_socket(broker.address) as sock:
            task_id = submit(sock, "9x9conv2d:16")
            result = collect_results(sock, 1)[task_id]
        worker.stop()
        assert result["fitness"] == 0.0
        assert "UnknownLayerToken" in result["error"]

    def test_submission_while_workers_idle_immediate_assignment(self, broker):
        workers = [start_worker(broker.address) for _ in range(2)]
        time.sleep(0.3)  # both workers parked in no_task backoff
        with model_socket(broker.address) as sock:
            start = time.monotonic()
            task_id = submit(sock, "1x1conv2d:8")
            result = collect_results(sock, 1)[task_id]
            elapsed = time.monotonic() - start
        for w in workers:
            w.stop()
        assert result["fitness"] > 0
        # Bounded by the worker request backoff ceiling, not by heartbeats.
        assert elapsed < 3.0


class TestFaultRecovery:
    def test_silent_worker_lease_expires_and_task_completes(self, broker):
        # A hand-rolled "worker" takes the task and then goes silent,
        # as if SIGKILLed: no heartbeat, no result.
        zombie = connect(broker.address, timeout=5.0)
        zombie.settimeout(5.0)
        with model_socket(broker.address) as sock:
            task_id = submit(sock, "5x5conv2d:64")
            time.sleep(0.1)
            send_message(zombie, {"type": "task_request", "sender_id": "zombie"})
            assignment = recv_message(zombie)
            assert assignment["type"] == "task_assignment"
            start = time.monotonic()
            live = start_worker(broker.address)
            result = collect_results(sock, 1)[task_id]
            recovery = time.monotonic() - start
        live.stop()
        zombie.close()
        assert result["fitness"] == pytest.approx(10.0)
        # interval x misses plus an assignment round-trip, with slack for
        # the sweep cadence and worker backoff.
        assert recovery < 4 * FAST.expiry_seconds + 1.0

    def test_worker_reconnects_after_broker_restart(self):
        server = BrokerServer(("127.0.0.1", 0), timeouts=FAST)
        server.start()
        address = server.address
        worker = start_worker(address)
        with model_socket(address) as sock:
            task_id = submit(sock, "7x7conv2d:32")
            collect_results(sock, 1)
        server.stop()
        time.sleep(0.3)
        host, port = address.rsplit(":", 1)
        server2 = BrokerServer((host, int(port)), timeouts=FAST)
        server2.start()
        try:
            with model_socket(address) as sock:
                task_id = submit(sock, "7x7conv2d:32")
                result = collect_results(sock, 1)[task_id]
            assert result["fitness"] > 0
        finally:
            worker.stop()
            server2.stop()


class TestNameserverDiscovery:
    def test_worker_discovers_broker_via_nameserver(self, broker):
        ns = NameserverServer(("127.0.0.1", 0), FAST)
        ns.serve_background()
        ns.state.register(broker.core.broker_id, broker.address)
        cfg = WorkerConfig(nameserver=f"127.0.0.1:{ns.server_address[1]}",
                           timeouts=FAST)
        worker = Worker(cfg)
        threading.Thread(target=worker.run, daemon=True).start()
        try:
            with model_socket(broker.address) as sock:
                task_id = submit(sock, "5x5conv2d:8")
                result = collect_results(sock, 1)[task_id]
            assert result["fitness"] > 0
        finally:
            worker.stop()
            ns.shutdown()
            ns.server_close()

    def test_broker_registers_itself(self):
        ns = NameserverServer(("127.0.0.1", 0), FAST)
        ns.serve_background()
        ns_addr = f"127.0.0.1:{ns.server_address[1]}"
        server = BrokerServer(("127.0.0.1", 0), broker_id="reg-b",
                              timeouts=FAST, nameserver=ns_addr)
        server.start()
        try:
            deadline = time.monotonic() + 5.0
            while time.monotonic() < deadline:
                if "reg-b" in ns.state.live_broker_ids():
                    break
                time.sleep(0.05)
            records = ns.state.lookup()
            assert [r.broker_id for r in records] == ["reg-b"]
            assert records[0].address == server.advertised_address()
        finally:
            server.stop()
            ns.shutdown()
            ns.server_close()


class TestLinkedBrokers:
    def test_overflow_completes_via_peer_workers(self):
        # Broker A has the tasks but no workers; linked broker B has two.
        a = BrokerServer(("127.0.0.1", 0), broker_id="A", timeouts=FAST)
        a.start()
        b = BrokerServer(("127.0.0.1", 0), broker_id="B", timeouts=FAST,
                         link_peers=(a.address,))
        b.start()
        workers = [start_worker(b.address) for _ in range(2)]
        try:
            deadline = time.monotonic() + 5.0
            while time.monotonic() < deadline and "B" not in a.core.peers:
                time.sleep(0.05)
            assert "B" in a.core.peers, "link never established"
            with model_socket(a.address) as sock:
                ids = [submit(sock, "5x5conv2d:64") for _ in range(6)]
                results = collect_results(sock, 6)
            assert set(results) == set(ids)
            assert all(r["fitness"] == pytest.approx(10.0)
                       for r in results.values())
            # A has no workers, so every completion crossed the link.
            shared = [t for t in a.core.tasks.values() if t.shared_to or
                      t.state == "completed"]
            assert len(shared) == 6
        finally:
            for w in workers:
                w.stop()
            b.stop()
            a.stop()

    def test_link_drop_requeues_and_still_completes(self):
        a = BrokerServer(("127.0.0.1", 0), broker_id="A2", timeouts=FAST)
        a.start()
        b = BrokerServer(("127.0.0.1", 0), broker_id="B2", timeouts=FAST,
                         link_peers=(a.address,))
        b.start()
        try:
            deadline = time.monotonic() + 5.0
            while time.monotonic() < deadline and "B2" not in a.core.peers:
                time.sleep(0.05)
            assert "B2" in a.core.peers
            # Make B look idle so A shares, but B has no real workers and
            # then dies: the shared tasks must come home and complete.
            a.core.peer_idle_report("B2", 4)
            with model_socket(a.address) as sock:
                ids = [submit(sock, "3x3conv2d:32") for _ in range(4)]
                deadline = time.monotonic() + 5.0
                while time.monotonic() < deadline:
                    if any(t.state == "shared_out"
                           for t in a.core.tasks.values()):
                        break
                    time.sleep(0.05)
                b.stop()
                worker = start_worker(a.address)
                results = collect_results(sock, 4)
            worker.stop()
            assert set(results) == set(ids)
        finally:
            a.stop()
