"""Worker client: discovers a broker, loops requesting tasks, keeps the
per-lease heartbeat alive while evaluating, and returns results.

Workers join and leave at will.  A clean shutdown finishes the in-flight
task first; an abrupt kill leaves recovery to the broker's lease expiry.
Evaluation failures are returned as error-flagged results (fitness 0)
rather than abandoned leases, so the model can tell a bad architecture
from a lost worker.
"""

from __future__ import annotations

import logging
import queue
import threading
import time
import uuid
from dataclasses import dataclass

from . import fitness as fit
from .broker import close_socket, connect
from .genotype import parse
from .protocol import ProtocolTimeouts, recv_message, send_message

logger = logging.getLogger(__name__)

BACKOFF_INITIAL_MS = 100
BACKOFF_MAX_MS = 2000

# Loss reported for errored evaluations; fitness is pinned to 0.
ERROR_LOSS = float(2 ** 63)


class BrokerUnreachable(ConnectionError):
    pass


@dataclass
class WorkerConfig:
    worker_id: str = ""
    broker: str | None = None
    nameserver: str | None = None
    timeouts: ProtocolTimeouts = ProtocolTimeouts()

    def __post_init__(self):
        if not self.worker_id:
            self.worker_id = f"worker-{uuid.uuid4().hex[:8]}"
        if (self.broker is None) == (self.nameserver is None):
            raise ValueError(
                "exactly one of broker or nameserver must be given"
            )


def evaluate_task(task: dict, worker_id: str = "") -> dict:
    """Run the evaluator named in the task's eval config; never raises."""
    task_id = task["task_id"]
    start = time.monotonic()
    try:
        genotype = parse(task["genotype"])
        cfg = fit.EvalConfig.from_wire(task["eval_config"])
        result = fit.evaluate(genotype, cfg, task_id=task_id, worker_id=worker_id)
        return {
            "type": "task_result",
            "task_id": task_id,
            "fitness": result.fitness,
            "loss": result.loss,
            "eval_duration_ms": (time.monotonic() - start) * 1000.0,
            "worker_id": worker_id,
            "sender_id": worker_id,
        }
    except Exception as e:  # noqa: BLE001 - any failure becomes a result
        logger.warning("worker %s: evaluation of %s failed: %s",
                       worker_id, task_id, e)
        return {
            "type": "task_result",
            "task_id": task_id,
            "fitness": 0.0,
            "loss": ERROR_LOSS,
            "error": f"{type(e).__name__}: {e}",
            "eval_duration_ms": (time.monotonic() - start) * 1000.0,
            "worker_id": worker_id,
            "sender_id": worker_id,
        }


class Worker:
    def __init__(self, cfg: WorkerConfig):
        self.cfg = cfg
        self.stop_event = threading.Event()
        self.tasks_completed = 0

    # ----------------------------------------------------------- discovery

    def _discover_broker(self) -> str:
        if self.cfg.broker:
            return self.cfg.broker
        with connect(self.cfg.nameserver, timeout=5.0) as sock:
            sock.settimeout(5.0)
            send_message(sock, {"type": "broker_list_request",
                                "sender_id": self.cfg.worker_id,
                                "role": "worker"})
            reply = recv_message(sock)
        if not reply or reply["type"] != "broker_list" or not reply["brokers"]:
            raise BrokerUnreachable("nameserver returned no live brokers")
        return reply["brokers"][0]["address"]

    # ---------------------------------------------------------------- run

    def run(self) -> None:
        backoff_ms = BACKOFF_INITIAL_MS
        while not self.stop_event.is_set():
            try:
                address = self._discover_broker()
                self._serve_broker(address)
                backoff_ms = BACKOFF_INITIAL_MS
            except (ConnectionError, OSError, ValueError) as e:
                logger.info("worker %s: broker unavailable (%s); retrying",
                            self.cfg.worker_id, e)
                self.stop_event.wait(backoff_ms / 1000.0)
                backoff_ms = min(backoff_ms * 2, BACKOFF_MAX_MS)

    def stop(self) -> None:
        self.stop_event.set()

    def _serve_broker(self, address: str) -> None:
        sock = connect(address)
        send_lock = threading.Lock()
        inbox: queue.Queue = queue.Queue()
        hb_inbox: queue.Queue = queue.Queue()
        dead = threading.Event()

        def send(msg: dict) -> None:
            with send_lock:
                send_message(sock, msg)

        def read_loop() -> None:
            try:
                while True:
                    msg = recv_message(sock)
                    if msg is None:
                        break
                    if msg["type"] in ("heartbeat_ack", "reconnect"):
                        hb_inbox.put(msg)
                    else:
                        inbox.put(msg)
            except (ConnectionError, OSError, ValueError) as e:
                logger.debug("worker %s: read loop ended: %s",
                             self.cfg.worker_id, e)
            finally:
                dead.set()
                inbox.put(None)

        reader = threading.Thread(target=read_loop, daemon=True,
                                  name=f"{self.cfg.worker_id}-read")
        reader.start()
        backoff_ms = BACKOFF_INITIAL_MS
        try:
            while not self.stop_event.is_set() and not dead.is_set():
                send({"type": "task_request", "sender_id": self.cfg.worker_id})
                reply = inbox.get()
                if reply is None:
                    raise BrokerUnreachable("connection to broker lost")
                if reply["type"] == "no_task":
                    # Exponential backoff bounds the idle request rate.
                    self.stop_event.wait(backoff_ms / 1000.0)
                    backoff_ms = min(backoff_ms * 2, BACKOFF_MAX_MS)
                    continue
                if reply["type"] != "task_assignment":
                    logger.warning("worker %s: unexpected reply %s",
                                   self.cfg.worker_id, reply["type"])
                    continue
                backoff_ms = BACKOFF_INITIAL_MS
                self._run_task(reply, send, hb_inbox)
                self.tasks_completed += 1
        finally:
            close_socket(sock)

    def _run_task(self, task: dict, send, hb_inbox: queue.Queue) -> None:
        lease_id = task["lease_id"]
        hb_stop = threading.Event()
        interval = self.cfg.timeouts.heartbeat_interval_ms / 1000.0

        def heartbeat_loop() -> None:
            # Runs alongside evaluation so long tasks never expire a lease.
            while not hb_stop.wait(interval):
                try:
                    send({"type": "heartbeat",
                          "sender_id": self.cfg.worker_id,
                          "lease_id": lease_id})
                except (ConnectionError, OSError):
                    return
                try:
                    reply = hb_inbox.get(timeout=interval)
                except queue.Empty:
                    continue
                if reply["type"] == "reconnect":
                    logger.info("worker %s: lease %s no longer valid",
                                self.cfg.worker_id, lease_id)
                    return

        hb = threading.Thread(target=heartbeat_loop, daemon=True,
                              name=f"{self.cfg.worker_id}-hb")
        hb.start()
        try:
            result = evaluate_task(task, self.cfg.worker_id)
        finally:
            hb_stop.set()
        send(result)
        hb.join(timeout=2 * interval)


def run_worker(cfg: WorkerConfig) -> Worker:
    """Run a worker until stopped; returns the worker for inspection."""
    worker = Worker(cfg)
    worker.run()
    return worker
