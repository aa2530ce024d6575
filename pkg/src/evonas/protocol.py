"""Framed, typed JSON message protocol.

Every frame is a 4-byte big-endian length followed by exactly that many
bytes of UTF-8 JSON encoding an object with a string "type" field.
Unknown extra fields are ignored for forward compatibility.  All
model-broker, worker-broker, broker-broker, and broker/nameserver
traffic uses this format.
"""

from __future__ import annotations

import json
import socket
import struct
from dataclasses import dataclass

MAX_PAYLOAD = 16 * 2 ** 20
HEADER = struct.Struct("!I")

# Default protocol timing.
HEARTBEAT_INTERVAL_MS = 2000
HEARTBEAT_MISSES_TO_EXPIRE = 3
REQUEST_TIMEOUT_MS = 5000


class ProtocolError(ValueError):
    pass


class OversizedMessage(ProtocolError):
    pass


class Truncated(ProtocolError):
    pass


class BadEncoding(ProtocolError):
    pass


class UnknownType(ProtocolError):
    pass


class MissingField(ProtocolError):
    pass


# Required fields per message type (beyond "type" itself).
MESSAGE_TYPES: dict[str, tuple[str, ...]] = {
    "submit_task": ("task_id", "genotype", "eval_config", "sender_id"),
    "task_request": ("sender_id",),
    "task_assignment": ("task_id", "genotype", "eval_config", "lease_id"),
    "no_task": (),
    "task_result": ("task_id", "fitness", "loss", "sender_id"),
    "heartbeat": ("sender_id",),
    "heartbeat_ack": (),
    "reconnect": (),
    "register_broker": ("sender_id", "address"),
    "broker_list_request": ("sender_id",),
    "broker_list": ("brokers",),
    "link_request": ("sender_id", "address"),
    "link_accept": ("sender_id",),
    "share_task": ("task_id", "genotype", "eval_config", "sender_id"),
    "reclaim_task": ("task_id", "fitness", "loss", "sender_id"),
}


def validate_message(msg: dict) -> dict:
    mtype = msg.get("type")
    if not isinstance(mtype, str) or mtype not in MESSAGE_TYPES:
        raise UnknownType(f"unknown message type {mtype!r}")
    for fld in MESSAGE_TYPES[mtype]:
        if fld not in msg:
            raise MissingField(f"{mtype} message is missing field {fld!r}")
    return msg


def encode_frame(msg: dict) -> bytes:
    """Length prefix + canonical JSON payload."""
    validate_message(msg)
    payload = json.dumps(msg, sort_keys=True, separators=(",", ":")).encode("utf-8")
    if len(payload) > MAX_PAYLOAD:
        raise OversizedMessage(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    return HEADER.pack(len(payload)) + payload


def decode_frame(data: bytes) -> dict:
    """Decode one complete frame; the buffer must hold the whole frame."""
    if len(data) < HEADER.size:
        raise Truncated(f"need {HEADER.size} header bytes, have {len(data)}")
    (length,) = HEADER.unpack_from(data)
    if length < 1 or length > MAX_PAYLOAD:
        raise OversizedMessage(f"declared payload length {length} out of bounds")
    if len(data) < HEADER.size + length:
        raise Truncated(
            f"payload declares {length} bytes, only {len(data) - HEADER.size} present"
        )
    raw = data[HEADER.size:HEADER.size + length]
    try:
        obj = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise BadEncoding(f"payload is not UTF-8 JSON: {e}") from e
    if not isinstance(obj, dict):
        raise BadEncoding("payload is not a JSON object")
    return validate_message(obj)


class FrameReader:
    """Incremental decoder: feed arbitrary byte fragments, get messages.

    Frames split at any byte offset reassemble correctly.
    """

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[dict]:
        self._buf.extend(data)
        out = []
        while True:
            if len(self._buf) < HEADER.size:
                break
            (length,) = HEADER.unpack_from(self._buf)
            if length < 1 or length > MAX_PAYLOAD:
                raise OversizedMessage(f"declared payload length {length} out of bounds")
            total = HEADER.size + length
            if len(self._buf) < total:
                break
            frame = bytes(self._buf[:total])
            del self._buf[:total]
            out.append(decode_frame(frame))
        return out


def send_message(sock: socket.socket, msg: dict) -> None:
    sock.sendall(encode_frame(msg))


def recv_message(sock: socket.socket) -> dict | None:
    """Blocking read of one frame; None on clean EOF at a frame boundary."""

    def recv_exact(n: int) -> bytes | None:
        buf = b""
        while len(buf) < n:
            chunk = sock.recv(n - len(buf))
            if not chunk:
                return None if not buf else buf
            buf += chunk
        return buf

    header = recv_exact(HEADER.size)
    if header is None:
        return None
    if len(header) < HEADER.size:
        raise Truncated("connection closed mid-header")
    (length,) = HEADER.unpack(header)
    if length < 1 or length > MAX_PAYLOAD:
        raise OversizedMessage(f"declared payload length {length} out of bounds")
    payload = recv_exact(length)
    if payload is None or len(payload) < length:
        raise Truncated("connection closed mid-payload")
    return decode_frame(header + payload)


@dataclass(frozen=True)
class ProtocolTimeouts:
    heartbeat_interval_ms: int = HEARTBEAT_INTERVAL_MS
    heartbeat_misses_to_expire: int = HEARTBEAT_MISSES_TO_EXPIRE
    request_timeout_ms: int = REQUEST_TIMEOUT_MS

    def __post_init__(self):
        if self.heartbeat_interval_ms <= 0:
            raise ProtocolError("heartbeat interval must be positive")
        if self.heartbeat_misses_to_expire < 1:
            raise ProtocolError("heartbeat misses must be >= 1")

    @property
    def expiry_seconds(self) -> float:
        return self.heartbeat_interval_ms * self.heartbeat_misses_to_expire / 1000.0
