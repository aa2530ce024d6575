"""Central registry of broker addresses with heartbeat-based liveness.

Brokers register and heartbeat; records silently expire after
heartbeat_interval x misses_to_expire without a beat.  A heartbeat from
an expired or unknown broker gets a reconnect reply telling it to
re-register.  Workers and models ask for the broker list; brokers asking
for link candidates are excluded from their own answer.

The registry itself is a plain lock-guarded state object driven by an
injectable clock; the TCP server is a thin shell around it.
"""

from __future__ import annotations

import logging
import socket
import socketserver
import threading
from dataclasses import dataclass

from .clock import SystemClock
from .protocol import (
    ProtocolTimeouts,
    recv_message,
    send_message,
)

logger = logging.getLogger(__name__)


class AddressConflict(ValueError):
    pass


@dataclass
class BrokerRecord:
    broker_id: str
    address: str
    last_heartbeat: float
    registered_at: float
    seq: int
    num_clients: int | None = None


class NameserverState:
    """Broker registry; every mutation is serialized by one lock."""

    def __init__(self, timeouts: ProtocolTimeouts | None = None, clock=None):
        self.timeouts = timeouts or ProtocolTimeouts()
        self.clock = clock or SystemClock()
        self._lock = threading.Lock()
        self._records: dict[str, BrokerRecord] = {}
        self._seq = 0

    def _sweep_locked(self) -> None:
        now = self.clock.monotonic()
        expiry = self.timeouts.expiry_seconds
        dead = [
            bid for bid, rec in self._records.items()
            if now - rec.last_heartbeat > expiry
        ]
        for bid in dead:
            logger.info("nameserver: expiring silent broker %s", bid)
            del self._records[bid]

    def register(self, broker_id: str, address: str) -> None:
        if not address or ":" not in address:
            raise ValueError(f"malformed broker address {address!r}")
        with self._lock:
            self._sweep_locked()
            for rec in self._records.values():
                if rec.address == address and rec.broker_id != broker_id:
                    raise AddressConflict(
                        f"address {address} already registered by {rec.broker_id}"
                    )
            now = self.clock.monotonic()
            existing = self._records.get(broker_id)
            if existing is not None and existing.address == address:
                existing.last_heartbeat = now
                return
            self._seq += 1
            self._records[broker_id] = BrokerRecord(
                broker_id, address, now, now, self._seq
            )

    def heartbeat(self, broker_id: str, num_clients: int | None = None) -> str:
        """Returns "ack" for a live broker, "reconnect" otherwise."""
        with self._lock:
            self._sweep_locked()
            rec = self._records.get(broker_id)
            if rec is None:
                return "reconnect"
            rec.last_heartbeat = self.clock.monotonic()
            if num_clients is not None:
                rec.num_clients = num_clients
            return "ack"

    def lookup(self, requester_id: str = "", requester_role: str = "worker"
               ) -> list[BrokerRecord]:
        with self._lock:
            self._sweep_locked()
            records = list(self._records.values())
        if requester_role == "broker":
            records = [r for r in records if r.broker_id != requester_id]
        # Least-loaded first when client counts are reported; registration
        # order among brokers that have not reported.
        records.sort(key=lambda r: (r.num_clients is None,
                                    r.num_clients if r.num_clients is not None else 0,
                                    r.seq))
        return records

    def live_broker_ids(self) -> list[str]:
        with self._lock:
            self._sweep_locked()
            return sorted(self._records)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        state: NameserverState = self.server.state  # type: ignore[attr-defined]
        sock: socket.socket = self.request
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        try:
            while True:
                msg = recv_message(sock)
                if msg is None:
                    return
                reply = self._dispatch(state, msg)
                if reply is not None:
                    send_message(sock, reply)
        except (ConnectionError, OSError, ValueError) as e:
            logger.debug("nameserver connection ended: %s", e)

    @staticmethod
    def _dispatch(state: NameserverState, msg: dict) -> dict | None:
        mtype = msg["type"]
        if mtype == "register_broker":
            try:
                state.register(msg["sender_id"], msg["address"])
                return {"type": "heartbeat_ack", "ok": True}
            except (AddressConflict, ValueError) as e:
                return {"type": "heartbeat_ack", "ok": False,
                        "error": type(e).__name__, "detail": str(e)}
        if mtype == "heartbeat":
            verdict = state.heartbeat(msg["sender_id"], msg.get("num_clients"))
            if verdict == "ack":
                return {"type": "heartbeat_ack"}
            return {"type": "reconnect"}
        if mtype == "broker_list_request":
            records = state.lookup(msg["sender_id"], msg.get("role", "worker"))
            return {
                "type": "broker_list",
                "brokers": [
                    {"broker_id": r.broker_id, "address": r.address}
                    for r in records
                ],
            }
        logger.warning("nameserver: unexpected message type %s", mtype)
        return None


class NameserverServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, listen: tuple[str, int],
                 timeouts: ProtocolTimeouts | None = None, clock=None):
        super().__init__(listen, _Handler)
        self.state = NameserverState(timeouts, clock)

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def serve_background(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, daemon=True,
                             name="nameserver")
        t.start()
        return t
