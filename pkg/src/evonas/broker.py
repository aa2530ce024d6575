"""Task broker: queues tasks from models, leases them to workers under
heartbeat guard, returns results, and shares work with linked brokers.

Queue discipline: owned tasks dispatch before shared tasks; expired
leases requeue their task at the front of its original queue; the first
result for a task wins and later duplicates are acknowledged but not
re-forwarded, so the model sees exactly one result per task id.

All state mutations go through one lock (the "single logical owner");
connection handler threads call core methods and perform the returned
sends after the lock is released, so no handler blocks the owner.
"""

from __future__ import annotations

import logging
import socket
import socketserver
import threading
import uuid
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from .clock import SystemClock
from .protocol import (
    ProtocolTimeouts,
    recv_message,
    send_message,
)

logger = logging.getLogger(__name__)

SendFn = Callable[[dict], None]


class BrokerError(ValueError):
    pass


class DuplicateTaskId(BrokerError):
    pass


class UnknownTask(BrokerError):
    pass


class PeerUnreachable(BrokerError):
    pass


@dataclass
class Lease:
    lease_id: str
    task_id: str
    worker_id: str
    granted_at: float
    last_heartbeat: float


@dataclass
class TaskRecord:
    task_id: str
    genotype: str
    eval_config: dict
    origin: str  # "owned" or the originating peer broker id
    state: str = "queued"  # queued | leased | shared_out | completed
    lease: Lease | None = None
    shared_to: str | None = None
    result: dict | None = None
    route_conn: object = None
    route_send: SendFn | None = None


@dataclass
class WorkerInfo:
    worker_id: str
    last_request: float
    lease_id: str | None = None


@dataclass
class PeerLink:
    peer_id: str
    send: SendFn
    conn: object = None
    idle_workers: int = 0
    last_heartbeat: float = 0.0


Actions = list[tuple[SendFn, dict]]


def close_socket(sock: socket.socket) -> None:
    """Close a socket that another thread may be blocked reading.

    A bare close() while a recv() is in flight leaves the kernel file
    referenced by the blocked syscall, so no FIN is sent and the remote
    end never sees EOF; shutdown() first tears the connection down and
    wakes the reader.
    """
    try:
        sock.shutdown(socket.SHUT_RDWR)
    except OSError:
        pass
    try:
        sock.close()
    except OSError:
        pass


class BrokerCore:
    """Queue/lease/link state machine; transport-agnostic."""

    def __init__(self, broker_id: str | None = None,
                 timeouts: ProtocolTimeouts | None = None, clock=None,
                 share_factor: float = 2.0):
        self.broker_id = broker_id or f"broker-{uuid.uuid4().hex[:8]}"
        self.timeouts = timeouts or ProtocolTimeouts()
        if share_factor < 0:
            raise BrokerError("share_factor must be non-negative")
        # Share only when pending owned work exceeds share_factor x the
        # local idle worker count (the high-water mark).
        self.share_factor = share_factor
        self.clock = clock or SystemClock()
        self._lock = threading.Lock()
        self.tasks: dict[str, TaskRecord] = {}
        self.owned_queue: deque[str] = deque()
        self.shared_queue: deque[str] = deque()
        self.leases: dict[str, Lease] = {}
        self.workers: dict[str, WorkerInfo] = {}
        self.peers: dict[str, PeerLink] = {}

    # ------------------------------------------------------------- model

    def submit_task(self, task_id: str, genotype: str, eval_config: dict,
                    send: SendFn, conn: object = None) -> Actions:
        with self._lock:
            existing = self.tasks.get(task_id)
            if existing is not None:
                if existing.route_conn is conn and conn is not None:
                    raise DuplicateTaskId(f"task {task_id} already submitted")
                # A reconnecting model resubmitting: re-associate routing.
                existing.route_conn = conn
                existing.route_send = send
                if existing.state == "completed" and existing.result is not None:
                    return [(send, existing.result)]
                return []
            record = TaskRecord(task_id, genotype, eval_config, origin="owned",
                                route_conn=conn, route_send=send)
            self.tasks[task_id] = record
            self.owned_queue.append(task_id)
            return []

    # ------------------------------------------------------------ worker

    def _pop_next_task_locked(self) -> TaskRecord | None:
        # Owned before shared; skip stale entries left by first-result-wins.
        for queue in (self.owned_queue, self.shared_queue):
            while queue:
                task_id = queue.popleft()
                record = self.tasks.get(task_id)
                if record is not None and record.state == "queued":
                    return record
        return None

    def request_task(self, worker_id: str, send: SendFn) -> Actions:
        with self._lock:
            now = self.clock.monotonic()
            info = self.workers.setdefault(worker_id, WorkerInfo(worker_id, now))
            info.last_request = now
            if info.lease_id is not None:
                # The worker evidently restarted: revoke and requeue at front.
                self._expire_lease_locked(info.lease_id, reason="worker restart")
            record = self._pop_next_task_locked()
            if record is None:
                return [(send, {"type": "no_task"})]
            lease = Lease(str(uuid.uuid4()), record.task_id, worker_id, now, now)
            self.leases[lease.lease_id] = lease
            record.state = "leased"
            record.lease = lease
            info.lease_id = lease.lease_id
            return [(send, {
                "type": "task_assignment",
                "task_id": record.task_id,
                "genotype": record.genotype,
                "eval_config": record.eval_config,
                "lease_id": lease.lease_id,
            })]

    def worker_heartbeat(self, worker_id: str, lease_id: str | None,
                         send: SendFn) -> Actions:
        with self._lock:
            lease = self.leases.get(lease_id) if lease_id else None
            if lease is None or lease.worker_id != worker_id:
                return [(send, {"type": "reconnect"})]
            lease.last_heartbeat = self.clock.monotonic()
            if worker_id in self.workers:
                self.workers[worker_id].last_request = lease.last_heartbeat
            return [(send, {"type": "heartbeat_ack"})]

    def complete_task(self, worker_id: str, msg: dict) -> Actions:
        task_id = msg["task_id"]
        with self._lock:
            record = self.tasks.get(task_id)
            if record is None:
                raise UnknownTask(f"result for unknown task {task_id}")
            info = self.workers.get(worker_id)
            if info is not None and info.lease_id is not None:
                lease = self.leases.get(info.lease_id)
                if lease is not None and lease.task_id == task_id:
                    del self.leases[info.lease_id]
                    info.lease_id = None
            if record.state == "completed":
                # Post-expiry duplicate: first result won already.
                return []
            if record.lease is not None and record.lease.lease_id in self.leases:
                # First result arrived from an expired-and-reassigned lease's
                # original worker; cancel the live lease, first result wins.
                live = self.leases.pop(record.lease.lease_id, None)
                if live is not None:
                    holder = self.workers.get(live.worker_id)
                    if holder is not None and holder.lease_id == live.lease_id:
                        holder.lease_id = None
            record.state = "completed"
            record.lease = None
            return self._forward_result_locked(record, msg)

    def _forward_result_locked(self, record: TaskRecord, msg: dict) -> Actions:
        result = {
            "type": "task_result",
            "task_id": record.task_id,
            "fitness": msg["fitness"],
            "loss": msg["loss"],
            "sender_id": self.broker_id,
        }
        for extra in ("error", "eval_duration_ms", "worker_id"):
            if extra in msg:
                result[extra] = msg[extra]
        if record.origin == "owned":
            record.result = result
            if record.route_send is not None:
                return [(record.route_send, result)]
            return []
        peer = self.peers.get(record.origin)
        if peer is None:
            logger.warning("broker %s: no link to return shared task %s",
                           self.broker_id, record.task_id)
            return []
        reclaim = dict(result, type="reclaim_task")
        return [(peer.send, reclaim)]

    # ------------------------------------------------------------- peers

    def add_peer(self, peer_id: str, send: SendFn, conn: object = None) -> None:
        with self._lock:
            self.peers[peer_id] = PeerLink(peer_id, send, conn,
                                           last_heartbeat=self.clock.monotonic())

    def peer_heartbeat(self, peer_id: str, idle_workers: int,
                       send: SendFn) -> Actions:
        with self._lock:
            peer = self.peers.get(peer_id)
            if peer is None:
                return [(send, {"type": "reconnect"})]
            peer.idle_workers = idle_workers
            peer.last_heartbeat = self.clock.monotonic()
            # The ack carries our own idle capacity so both link ends can
            # make sharing decisions.
            return [(send, {"type": "heartbeat_ack",
                            "sender_id": self.broker_id,
                            "idle_workers": self._idle_workers_locked()})]

    def peer_idle_report(self, peer_id: str, idle_workers: int) -> None:
        with self._lock:
            peer = self.peers.get(peer_id)
            if peer is not None:
                peer.idle_workers = idle_workers
                peer.last_heartbeat = self.clock.monotonic()

    def handle_share_task(self, peer_id: str, msg: dict) -> Actions:
        with self._lock:
            if msg["task_id"] in self.tasks:
                return []
            record = TaskRecord(msg["task_id"], msg["genotype"],
                                msg["eval_config"], origin=peer_id)
            self.tasks[record.task_id] = record
            self.shared_queue.append(record.task_id)
            return []

    def handle_reclaim_task(self, peer_id: str, msg: dict) -> Actions:
        task_id = msg["task_id"]
        with self._lock:
            record = self.tasks.get(task_id)
            if record is None or record.origin != "owned":
                raise UnknownTask(f"reclaim for unknown task {task_id}")
            if record.state == "completed":
                return []
            if record.state != "shared_out" or record.shared_to != peer_id:
                logger.warning("broker %s: reclaim for task %s not shared to %s",
                               self.broker_id, task_id, peer_id)
            record.state = "completed"
            record.shared_to = None
            return self._forward_result_locked(record, msg)

    def peer_lost(self, peer_id: str) -> None:
        """Requeue tasks shared out to a dead link; drop its shared-in work."""
        with self._lock:
            self.peers.pop(peer_id, None)
            for record in self.tasks.values():
                if record.state == "shared_out" and record.shared_to == peer_id:
                    record.state = "queued"
                    record.shared_to = None
                    self.owned_queue.appendleft(record.task_id)
                elif record.origin == peer_id and record.state != "completed":
                    record.state = "completed"  # abandoned; nobody to reclaim

    # ------------------------------------------------------------- sweep

    def _expire_lease_locked(self, lease_id: str, reason: str) -> None:
        lease = self.leases.pop(lease_id, None)
        if lease is None:
            return
        info = self.workers.get(lease.worker_id)
        if info is not None and info.lease_id == lease_id:
            info.lease_id = None
        record = self.tasks.get(lease.task_id)
        if record is None or record.state != "leased":
            return
        logger.info("broker %s: lease on %s expired (%s), requeueing",
                    self.broker_id, lease.task_id, reason)
        record.state = "queued"
        record.lease = None
        if record.origin == "owned":
            self.owned_queue.appendleft(record.task_id)
        else:
            self.shared_queue.appendleft(record.task_id)

    def idle_worker_count(self) -> int:
        with self._lock:
            return self._idle_workers_locked()

    def _idle_workers_locked(self) -> int:
        now = self.clock.monotonic()
        window = self.timeouts.expiry_seconds
        return sum(
            1 for w in self.workers.values()
            if w.lease_id is None and now - w.last_request <= window
        )

    def sweep(self) -> Actions:
        """Expire stale leases and push overflow work to idle peers."""
        actions: Actions = []
        with self._lock:
            now = self.clock.monotonic()
            expiry = self.timeouts.expiry_seconds
            for lease_id, lease in list(self.leases.items()):
                if now - lease.last_heartbeat > expiry:
                    self._expire_lease_locked(lease_id, reason="heartbeat expiry")
            actions.extend(self._maybe_share_locked())
        return actions

    def _pending_owned_locked(self) -> list[str]:
        return [tid for tid in self.owned_queue
                if self.tasks[tid].state == "queued"]

    def _maybe_share_locked(self) -> Actions:
        pending = self._pending_owned_locked()
        idle = self._idle_workers_locked()
        high_water = int(self.share_factor * idle)
        if len(pending) <= high_water:
            return []
        actions: Actions = []
        surplus = len(pending) - high_water
        # Share from the back so local FIFO order is preserved.
        candidates = deque(pending)
        for peer in self.peers.values():
            budget = min(peer.idle_workers, surplus)
            for _ in range(budget):
                if not candidates:
                    break
                task_id = candidates.pop()
                record = self.tasks[task_id]
                record.state = "shared_out"
                record.shared_to = peer.peer_id
                surplus -= 1
                actions.append((peer.send, {
                    "type": "share_task",
                    "task_id": record.task_id,
                    "genotype": record.genotype,
                    "eval_config": record.eval_config,
                    "sender_id": self.broker_id,
                }))
            if surplus <= 0:
                break
        return actions

    # ------------------------------------------------------------- misc

    def connection_closed(self, conn: object) -> None:
        peer_ids = [pid for pid, p in self.peers.items() if p.conn is conn]
        for pid in peer_ids:
            self.peer_lost(pid)

    def client_count(self) -> int:
        with self._lock:
            now = self.clock.monotonic()
            window = self.timeouts.expiry_seconds
            return sum(1 for w in self.workers.values()
                       if now - w.last_request <= window)

    def stats(self) -> dict:
        with self._lock:
            return {
                "owned_queued": len(self._pending_owned_locked()),
                "shared_queued": sum(
                    1 for t in self.shared_queue
                    if self.tasks[t].state == "queued"),
                "leases": len(self.leases),
                "tasks": len(self.tasks),
                "peers": sorted(self.peers),
            }


def perform(actions: Actions) -> None:
    for send, msg in actions:
        try:
            send(msg)
        except (ConnectionError, OSError) as e:
            logger.debug("broker send failed: %s", e)


class _BrokerHandler(socketserver.BaseRequestHandler):
    def handle(self):
        server: BrokerServer = self.server  # type: ignore[assignment]
        core = server.core
        sock: socket.socket = self.request
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        server.track_connection(sock)
        send_lock = threading.Lock()
        conn = object()  # identity token for this connection

        def send(msg: dict) -> None:
            with send_lock:
                send_message(sock, msg)

        try:
            while True:
                msg = recv_message(sock)
                if msg is None:
                    return
                try:
                    perform(self._dispatch(core, msg, send, conn))
                except BrokerError as e:
                    logger.warning("broker %s: %s", core.broker_id, e)
        except (ConnectionError, OSError, ValueError) as e:
            logger.debug("broker connection ended: %s", e)
        finally:
            server.untrack_connection(sock)
            core.connection_closed(conn)

    @staticmethod
    def _dispatch(core: BrokerCore, msg: dict, send: SendFn,
                  conn: object) -> Actions:
        mtype = msg["type"]
        sender = msg.get("sender_id", "")
        if mtype == "submit_task":
            return core.submit_task(msg["task_id"], msg["genotype"],
                                    msg["eval_config"], send, conn)
        if mtype == "task_request":
            return core.request_task(sender, send)
        if mtype == "heartbeat":
            if sender in core.peers:
                return core.peer_heartbeat(sender, msg.get("idle_workers", 0), send)
            return core.worker_heartbeat(sender, msg.get("lease_id"), send)
        if mtype == "task_result":
            return core.complete_task(sender, msg)
        if mtype == "link_request":
            core.add_peer(sender, send, conn)
            return [(send, {"type": "link_accept", "sender_id": core.broker_id})]
        if mtype == "share_task":
            return core.handle_share_task(sender, msg)
        if mtype == "reclaim_task":
            return core.handle_reclaim_task(sender, msg)
        if mtype == "heartbeat_ack":
            return []
        logger.warning("broker %s: unexpected message type %s",
                       core.broker_id, mtype)
        return []


class BrokerServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, listen: tuple[str, int], broker_id: str | None = None,
                 timeouts: ProtocolTimeouts | None = None,
                 nameserver: str | None = None,
                 link_peers: tuple[str, ...] = (),
                 share_factor: float = 2.0):
        super().__init__(listen, _BrokerHandler)
        self.core = BrokerCore(broker_id, timeouts, share_factor=share_factor)
        self.nameserver = nameserver
        self.link_peers = link_peers
        self._stop = threading.Event()
        self._bg_threads: list[threading.Thread] = []
        self._conns: set[socket.socket] = set()
        self._conns_lock = threading.Lock()

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> None:
        self._spawn(self.serve_forever, "broker-accept")
        self._spawn(self._sweep_loop, "broker-sweep")
        if self.nameserver:
            self._spawn(self._nameserver_loop, "broker-ns")
        for peer_addr in self.link_peers:
            self._spawn(lambda a=peer_addr: self._link_loop(a), "broker-link")

    def track_connection(self, sock: socket.socket) -> None:
        with self._conns_lock:
            self._conns.add(sock)

    def untrack_connection(self, sock: socket.socket) -> None:
        with self._conns_lock:
            self._conns.discard(sock)

    def stop(self) -> None:
        self._stop.set()
        self.shutdown()
        self.server_close()
        # Tear down live client connections too, so a stopped broker looks
        # exactly like a dead process to its workers and models.
        with self._conns_lock:
            conns = list(self._conns)
        for sock in conns:
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass

    def _spawn(self, fn, name: str) -> None:
        t = threading.Thread(target=fn, daemon=True, name=name)
        t.start()
        self._bg_threads.append(t)

    def _sweep_loop(self) -> None:
        interval = self.core.timeouts.heartbeat_interval_ms / 2000.0
        while not self._stop.wait(interval):
            perform(self.core.sweep())

    def _nameserver_loop(self) -> None:
        interval = self.core.timeouts.heartbeat_interval_ms / 1000.0
        while not self._stop.is_set():
            try:
                with connect(self.nameserver) as sock:
                    self._register(sock)
                    while not self._stop.wait(interval):
                        send_message(sock, {
                            "type": "heartbeat",
                            "sender_id": self.core.broker_id,
                            "num_clients": self.core.client_count(),
                        })
                        reply = recv_message(sock)
                        if reply is None:
                            break
                        if reply["type"] == "reconnect":
                            self._register(sock)
            except (ConnectionError, OSError, ValueError) as e:
                logger.debug("broker %s: nameserver loop error: %s",
                             self.core.broker_id, e)
            self._stop.wait(interval)

    def _register(self, sock: socket.socket) -> None:
        send_message(sock, {
            "type": "register_broker",
            "sender_id": self.core.broker_id,
            "address": self.advertised_address(),
        })
        recv_message(sock)  # ack

    def advertised_address(self) -> str:
        host, port = self.server_address[:2]
        if host in ("0.0.0.0", "::"):
            host = "127.0.0.1"
        return f"{host}:{port}"

    def _link_loop(self, peer_addr: str) -> None:
        """Maintain an outbound link to a peer broker."""
        interval = self.core.timeouts.heartbeat_interval_ms / 1000.0
        while not self._stop.is_set():
            try:
                sock = connect(peer_addr)
            except OSError as e:
                logger.debug("broker %s: peer %s unreachable: %s",
                             self.core.broker_id, peer_addr, e)
                self._stop.wait(interval)
                continue
            send_lock = threading.Lock()
            dead = threading.Event()
            peer_box: dict = {}
            conn = object()

            def send(msg: dict, _sock=sock, _lock=send_lock) -> None:
                with _lock:
                    send_message(_sock, msg)

            def read_loop() -> None:
                try:
                    while True:
                        msg = recv_message(sock)
                        if msg is None:
                            break
                        mtype = msg["type"]
                        if mtype == "link_accept":
                            peer_box["id"] = msg["sender_id"]
                            self.core.add_peer(msg["sender_id"], send, conn)
                        elif mtype == "heartbeat_ack":
                            if "id" in peer_box and "idle_workers" in msg:
                                self.core.peer_idle_report(
                                    peer_box["id"], msg["idle_workers"])
                        elif "id" in peer_box:
                            perform(_BrokerHandler._dispatch(
                                self.core, msg, send, conn))
                except (ConnectionError, OSError, ValueError) as e:
                    logger.debug("broker %s: link read ended: %s",
                                 self.core.broker_id, e)
                finally:
                    dead.set()

            reader = threading.Thread(target=read_loop, daemon=True,
                                      name="broker-link-read")
            reader.start()
            try:
                send({"type": "link_request",
                      "sender_id": self.core.broker_id,
                      "address": self.advertised_address()})
                while not self._stop.is_set() and not dead.wait(interval):
                    if "id" in peer_box:
                        send({"type": "heartbeat",
                              "sender_id": self.core.broker_id,
                              "idle_workers": self.core.idle_worker_count()})
            except (ConnectionError, OSError, ValueError) as e:
                logger.debug("broker %s: link to %s dropped: %s",
                             self.core.broker_id, peer_addr, e)
            finally:
                close_socket(sock)
                if "id" in peer_box:
                    self.core.peer_lost(peer_box["id"])
            self._stop.wait(interval)


def connect(address: str, timeout: float | None = None) -> socket.socket:
    host, _, port = address.rpartition(":")
    sock = socket.create_connection((host or "127.0.0.1", int(port)),
                                    timeout=timeout)
    sock.settimeout(None)
    # Frames are small and latency-sensitive; don't let Nagle batch them.
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return sock
