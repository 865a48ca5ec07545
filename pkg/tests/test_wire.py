import random
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.udp_mesh.errors import (
    BadMagic,
    BadVersion,
    FragmentedBroadcast,
    InconsistentLength,
    OversizePayload,
    OversizeTopic,
    Truncated,
    UnknownKind,
)
from src.udp_mesh.wire import (
    BROADCAST_ID,
    HEADER_SIZE,
    MAX_NAME_LEN,
    MTU,
    OVERHEAD_BUDGET,
    PAYLOAD_BUDGET,
    Envelope,
    Kind,
    decode_envelope,
    decode_name,
    encode_envelope,
    encode_name,
    fragment_capacity,
    node_id_for,
    plan_fragments,
)


def accumulate_ranges(payload_len, topic_len):
    """Independent oracle: walk the payload one fragment at a time."""
    ranges = []
    position = 0
    index = 0
    while True:
        capacity = PAYLOAD_BUDGET - topic_len if index == 0 else PAYLOAD_BUDGET
        end = min(position + capacity, payload_len)
        ranges.append((position, end))
        position = end
        index += 1
        if position >= payload_len:
            return ranges


def data_envelope(**overrides):
    fields = dict(
        kind=Kind.DATA,
        source_id=node_id_for("robot1"),
        dest_id=node_id_for("base"),
        message_id=7,
        frag_index=0,
        frag_count=1,
        priority=10,
        topic=b"telemetry",
        payload=b"x" * 300,
    )
    fields.update(overrides)
    return Envelope(**fields)


def test_header_layout():
    """Header fields sit at fixed big-endian offsets"""
    env = data_envelope(message_id=0x01020304, frag_index=0, frag_count=2, priority=200, payload=b"abc")
    datagram = encode_envelope(env)

    assert HEADER_SIZE == 31
    assert datagram[0:2] == b"UM"
    assert datagram[2] == 1
    assert datagram[3] == Kind.DATA
    assert int.from_bytes(datagram[4:12], "big") == env.source_id
    assert int.from_bytes(datagram[12:20], "big") == env.dest_id
    assert datagram[20:24] == b"\x01\x02\x03\x04"
    assert struct.unpack("!HH", datagram[24:28]) == (0, 2)
    assert datagram[28] == 200
    assert struct.unpack("!H", datagram[29:31]) == (3,)
    assert datagram[31] == len(b"telemetry")
    assert datagram[32:41] == b"telemetry"
    assert datagram[41:] == b"abc"


def test_overhead_fits_budget():
    """Worst-case framing stays inside the 100-byte overhead budget"""
    assert OVERHEAD_BUDGET == 100
    assert HEADER_SIZE + 1 + MAX_NAME_LEN <= OVERHEAD_BUDGET


def test_full_fragment_fits_mtu():
    topic = b"t" * MAX_NAME_LEN
    env = data_envelope(topic=topic, payload=b"p" * fragment_capacity(0, len(topic)))
    assert len(encode_envelope(env)) <= MTU

    later = data_envelope(frag_index=1, frag_count=2, topic=None, payload=b"p" * PAYLOAD_BUDGET)
    assert len(encode_envelope(later)) == HEADER_SIZE + PAYLOAD_BUDGET


def test_later_fragments_carry_no_topic():
    env = data_envelope(frag_index=3, frag_count=5, topic=None, payload=b"z" * 10)
    datagram = encode_envelope(env)
    assert len(datagram) == HEADER_SIZE + 10
    assert decode_envelope(datagram).topic is None


def test_heartbeat_and_ack_round_trip():
    heartbeat = Envelope(Kind.HEARTBEAT, node_id_for("d01"), BROADCAST_ID, payload=encode_name("d01"))
    assert decode_envelope(encode_envelope(heartbeat)) == heartbeat
    assert decode_name(heartbeat.payload) == "d01"

    ack = Envelope(Kind.ACK, node_id_for("base"), node_id_for("d01"), message_id=9, frag_index=2, frag_count=4)
    decoded = decode_envelope(encode_envelope(ack))
    assert decoded == ack
    assert decoded.payload == b""


def test_empty_topic_and_payload():
    env = data_envelope(topic=b"", payload=b"")
    decoded = decode_envelope(encode_envelope(env))
    assert decoded.topic == b""
    assert decoded.payload == b""


def test_oversize_topic_rejected():
    with pytest.raises(OversizeTopic):
        encode_envelope(data_envelope(topic=b"t" * 65))
    with pytest.raises(OversizeTopic):
        plan_fragments(10, 65)


def test_oversize_payload_rejected():
    with pytest.raises(OversizePayload):
        encode_envelope(data_envelope(topic=b"", payload=b"p" * (MTU - HEADER_SIZE)))


def test_decode_errors():
    good = encode_envelope(data_envelope())

    with pytest.raises(Truncated):
        decode_envelope(good[:20])
    with pytest.raises(Truncated):
        decode_envelope(good[:-1])
    with pytest.raises(InconsistentLength):
        decode_envelope(good + b"extra")
    with pytest.raises(BadMagic):
        decode_envelope(b"XX" + good[2:])
    with pytest.raises(BadVersion):
        decode_envelope(good[:2] + b"\x02" + good[3:])
    with pytest.raises(UnknownKind):
        decode_envelope(good[:3] + b"\x09" + good[4:])


def test_decode_rejects_bad_fragment_index():
    good = bytearray(encode_envelope(data_envelope(frag_index=1, frag_count=2, topic=None)))
    good[24:26] = struct.pack("!H", 5)
    with pytest.raises(InconsistentLength):
        decode_envelope(bytes(good))


@pytest.mark.parametrize("frag_index,frag_count", [(1, 2), (0, 2)])
def test_decode_rejects_fragmented_broadcast(frag_index, frag_count):
    env = Envelope(
        kind=Kind.BCAST_DATA,
        source_id=node_id_for("robot1"),
        dest_id=BROADCAST_ID,
        frag_index=frag_index,
        frag_count=frag_count,
        payload=b"x",
    )
    with pytest.raises(FragmentedBroadcast):
        decode_envelope(encode_envelope(env))


def test_envelope_validation():
    with pytest.raises(ValueError):
        data_envelope(frag_index=2, frag_count=2)
    with pytest.raises(ValueError):
        data_envelope(priority=256)
    with pytest.raises(ValueError):
        Envelope(Kind.ACK, 1, 2, payload=b"no")
    with pytest.raises(ValueError):
        data_envelope(frag_index=1, frag_count=2, topic=b"late")


def test_plan_fragments_examples():
    topic_len = len(b"telemetry")
    first = PAYLOAD_BUDGET - topic_len

    assert plan_fragments(0, topic_len).ranges == ((0, 0),)
    assert plan_fragments(first, topic_len).frag_count == 1
    assert plan_fragments(first + 1, topic_len).ranges == ((0, first), (first, first + 1))

    plan = plan_fragments(1_000_000, topic_len)
    assert plan.frag_count == 1 + -(-(1_000_000 - first) // PAYLOAD_BUDGET)
    assert plan.ranges[-1][1] == 1_000_000


def test_plan_fragments_matches_accumulation_oracle():
    """10,000 random (payload_len, topic_len) pairs, payload up to 10 MB"""
    rng = random.Random(20240501)
    for _ in range(10_000):
        topic_len = rng.randint(0, MAX_NAME_LEN)
        if rng.random() < 0.2:
            # boundaries of the first and second fragment
            payload_len = max(0, PAYLOAD_BUDGET - topic_len + rng.randint(-2, 2) + PAYLOAD_BUDGET * rng.randint(0, 2))
        else:
            payload_len = int(10 ** rng.uniform(0, 7)) - 1
        plan = plan_fragments(payload_len, topic_len)
        expected = accumulate_ranges(payload_len, topic_len)
        assert list(plan.ranges) == expected
        assert plan.frag_count == len(expected)
        assert plan.total_len == payload_len


@settings(max_examples=300)
@given(
    kind=st.sampled_from([Kind.DATA, Kind.BCAST_DATA]),
    source_id=st.integers(0, 2**64 - 1),
    dest_id=st.integers(0, 2**64 - 1),
    message_id=st.integers(0, 2**32 - 1),
    frag=st.integers(1, 0xFFFF).flatmap(lambda count: st.tuples(st.integers(0, count - 1), st.just(count))),
    priority=st.integers(0, 255),
    topic=st.binary(max_size=MAX_NAME_LEN),
    payload=st.binary(max_size=PAYLOAD_BUDGET - MAX_NAME_LEN),
)
def test_envelope_round_trip(kind, source_id, dest_id, message_id, frag, priority, topic, payload):
    frag_index, frag_count = frag if kind == Kind.DATA else (0, 1)
    env = Envelope(
        kind=kind,
        source_id=source_id,
        dest_id=dest_id,
        message_id=message_id,
        frag_index=frag_index,
        frag_count=frag_count,
        priority=priority,
        topic=topic if frag_index == 0 else None,
        payload=payload,
    )
    assert decode_envelope(encode_envelope(env)) == env


@settings(max_examples=300)
@given(st.binary(max_size=200))
def test_decode_never_raises_outside_hierarchy(data):
    from src.udp_mesh.errors import DecodeError

    try:
        decode_envelope(data)
    except DecodeError:
        pass


def test_node_id_is_stable_and_never_broadcast():
    assert node_id_for("robot1") == node_id_for("robot1")
    assert node_id_for("robot1") != node_id_for("robot2")
    assert node_id_for("robot1") != BROADCAST_ID
