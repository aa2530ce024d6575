import json
import random
import struct

import pytest

from evonas import protocol as proto
from evonas.protocol import (
    FrameReader,
    MESSAGE_TYPES,
    ProtocolTimeouts,
    decode_frame,
    encode_frame,
)


def random_message(rng: random.Random) -> dict:
    mtype = rng.choice(sorted(MESSAGE_TYPES))
    msg = {"type": mtype}
    for fld in MESSAGE_TYPES[mtype]:
        if fld in ("fitness", "loss"):
            msg[fld] = round(rng.uniform(0.01, 10.0), 6)
        elif fld == "eval_config":
            msg[fld] = {"evaluator_kind": "surrogate", "delay_ms": rng.randint(0, 9)}
        elif fld == "brokers":
            msg[fld] = [
                {"broker_id": f"b{i}", "address": f"host{i}:70{i}0"}
                for i in range(rng.randint(0, 3))
            ]
        else:
            msg[fld] = f"{fld}-{rng.randint(0, 999999)}"
    if rng.random() < 0.3:
        msg["generation"] = rng.randint(0, 20)
    if rng.random() < 0.3:
        msg["owned"] = rng.random() < 0.5
    return msg


def test_heartbeat_frame_layout():
    msg = {"type": "heartbeat", "sender_id": "w1", "lease_id": "l1"}
    frame = encode_frame(msg)
    (length,) = struct.unpack("!I", frame[:4])
    assert length == len(frame) - 4
    payload = json.loads(frame[4:].decode("utf-8"))
    assert payload == msg


def test_roundtrip_1000_random_messages():
    rng = random.Random(8)
    for _ in range(1000):
        msg = random_message(rng)
        assert decode_frame(encode_frame(msg)) == msg


def test_roundtrip_property_10000_cases():
    rng = random.Random(80)
    reader = FrameReader()
    for _ in range(10_000):
        msg = random_message(rng)
        out = reader.feed(encode_frame(msg))
        assert out == [msg]


def test_oversized_message_rejected():
    msg = {"type": "heartbeat", "sender_id": "x" * (17 * 2 ** 20)}
    with pytest.raises(proto.OversizedMessage):
        encode_frame(msg)


def test_truncated_inputs():
    with pytest.raises(proto.Truncated):
        decode_frame(b"\x00\x00\x00")
    frame = encode_frame({"type": "no_task"})
    with pytest.raises(proto.Truncated):
        decode_frame(frame[:-1])


def test_unknown_type():
    payload = json.dumps({"type": "warp_drive"}).encode()
    with pytest.raises(proto.UnknownType):
        decode_frame(struct.pack("!I", len(payload)) + payload)


def test_missing_field():
    payload = json.dumps({"type": "heartbeat"}).encode()
    with pytest.raises(proto.MissingField):
        decode_frame(struct.pack("!I", len(payload)) + payload)


def test_bad_encoding():
    payload = b"\xff\xfe{not json"
    with pytest.raises(proto.BadEncoding):
        decode_frame(struct.pack("!I", len(payload)) + payload)
    payload = json.dumps([1, 2, 3]).encode()
    with pytest.raises(proto.BadEncoding):
        decode_frame(struct.pack("!I", len(payload)) + payload)


def test_extra_fields_ignored():
    payload = json.dumps({"type": "no_task", "future": {"nested": 1}}).encode()
    msg = decode_frame(struct.pack("!I", len(payload)) + payload)
    assert msg["type"] == "no_task"


def test_declared_length_bounds():
    with pytest.raises(proto.OversizedMessage):
        decode_frame(struct.pack("!I", 0) + b"")
    with pytest.raises(proto.OversizedMessage):
        decode_frame(struct.pack("!I", proto.MAX_PAYLOAD + 1) + b"x")


def test_stream_fragmentation_at_every_offset():
    rng = random.Random(3)
    msgs = [random_message(rng) for _ in range(4)]
    stream = b"".join(encode_frame(m) for m in msgs)
    for split in range(len(stream) + 1):
        reader = FrameReader()
        out = reader.feed(stream[:split]) + reader.feed(stream[split:])
        assert out == msgs


def test_stream_byte_at_a_time():
    rng = random.Random(4)
    msgs = [random_message(rng) for _ in range(3)]
    stream = b"".join(encode_frame(m) for m in msgs)
    reader = FrameReader()
    out = []
    for i in range(len(stream)):
        out += reader.feed(stream[i:i + 1])
    assert out == msgs


def test_timeouts_invariants():
    t = ProtocolTimeouts()
    assert t.expiry_seconds == pytest.approx(6.0)
    with pytest.raises(proto.ProtocolError):
        ProtocolTimeouts(heartbeat_interval_ms=0)
    with pytest.raises(proto.ProtocolError):
        ProtocolTimeouts(heartbeat_misses_to_expire=0)
