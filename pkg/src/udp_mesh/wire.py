"""
Datagram envelope and fragmentation arithmetic.

Every datagram starts with a fixed 31-byte header in network byte order:

    magic(2) version(1) kind(1) source_id(8) dest_id(8) message_id(4)
    frag_index(2) frag_count(2) priority(1) payload_len(2)

Fragment 0 of Data/BcastData additionally carries the topic name as a
one-byte length followed by up to 64 bytes. See WIRE.md for offsets.
"""
import hashlib
import math
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional, Tuple

from .errors import (
    BadMagic,
    BadVersion,
    FragmentedBroadcast,
    InconsistentLength,
    OversizePayload,
    OversizeTopic,
    Truncated,
    UnknownKind,
)

MAGIC = 0x554D  # "UM"
VERSION = 1
MTU = 1500
PAYLOAD_BUDGET = 1400
OVERHEAD_BUDGET = MTU - PAYLOAD_BUDGET
MAX_NAME_LEN = 64
BROADCAST_ID = 0xFFFF_FFFF_FFFF_FFFF

_HEADER = struct.Struct("!HBBQQIHHBH")
HEADER_SIZE = _HEADER.size
TOPIC_PREFIX_SIZE = 1


class Kind(IntEnum):
    HEARTBEAT = 1
    DATA = 2
    ACK = 3
    BCAST_DATA = 4


_TOPIC_KINDS = (Kind.DATA, Kind.BCAST_DATA)


@dataclass(frozen=True, slots=True)
class Envelope:
    kind: Kind
    source_id: int
    dest_id: int
    message_id: int = 0
    frag_index: int = 0
    frag_count: int = 1
    priority: int = 128
    topic: Optional[bytes] = None
    payload: bytes = b""

    def __post_init__(self):
        if self.frag_count < 1 or not 0 <= self.frag_index < self.frag_count:
            raise ValueError(f"frag_index {self.frag_index} outside frag_count {self.frag_count}")
        if not 0 <= self.priority <= 0xFF:
            raise ValueError(f"priority {self.priority} outside 0-255")
        if self.kind == Kind.ACK and self.payload:
            raise ValueError("acks carry no payload")
        if self.carries_topic:
            if self.topic is None:
                object.__setattr__(self, "topic", b"")
        elif self.topic is not None:
            raise ValueError("topic only travels in fragment 0 of Data/BcastData")

    @property
    def carries_topic(self) -> bool:
        return self.kind in _TOPIC_KINDS and self.frag_index == 0

    @property
    def encoded_size(self) -> int:
        size = HEADER_SIZE + len(self.payload)
        if self.carries_topic:
            size += TOPIC_PREFIX_SIZE + len(self.topic)
        return size


@dataclass(frozen=True, slots=True)
class FragmentPlan:
    total_len: int
    frag_count: int
    ranges: Tuple[Tuple[int, int], ...]


def encode_envelope(env: Envelope) -> bytes:
    """
    Serialize an envelope into one datagram.

    Raises:
        OversizeTopic: topic name longer than 64 bytes
        OversizePayload: encoded datagram would exceed the 1500-byte MTU
    """
    if env.topic is not None and len(env.topic) > MAX_NAME_LEN:
        raise OversizeTopic(f"topic of {len(env.topic)} bytes exceeds {MAX_NAME_LEN}")
    if env.encoded_size > MTU:
        raise OversizePayload(f"datagram of {env.encoded_size} bytes exceeds MTU {MTU}")

    header = _HEADER.pack(
        MAGIC,
        VERSION,
        env.kind,
        env.source_id,
        env.dest_id,
        env.message_id,
        env.frag_index,
        env.frag_count,
        env.priority,
        len(env.payload),
    )
    if env.carries_topic:
        return b"".join((header, bytes((len(env.topic),)), env.topic, env.payload))
    return header + env.payload


def decode_envelope(data: bytes) -> Envelope:
    """
    Parse one datagram. Any inconsistency raises a DecodeError subclass.
    """
    if len(data) < HEADER_SIZE:
        raise Truncated(f"{len(data)} bytes is shorter than the {HEADER_SIZE}-byte header")

    (magic, version, kind, source_id, dest_id, message_id,
     frag_index, frag_count, priority, payload_len) = _HEADER.unpack_from(data)

    if magic != MAGIC:
        raise BadMagic(f"magic 0x{magic:04x}")
    if version != VERSION:
        raise BadVersion(f"version {version}")
    try:
        kind = Kind(kind)
    except ValueError:
        raise UnknownKind(f"kind {kind}") from None
    if kind == Kind.BCAST_DATA and frag_count != 1:
        raise FragmentedBroadcast(f"broadcast fragment {frag_index} of {frag_count}")

    offset = HEADER_SIZE
    topic = None
    if kind in _TOPIC_KINDS and frag_index == 0:
        if len(data) < offset + TOPIC_PREFIX_SIZE:
            raise Truncated("missing topic length")
        topic_len = data[offset]
        offset += TOPIC_PREFIX_SIZE
        if topic_len > MAX_NAME_LEN:
            raise InconsistentLength(f"topic length {topic_len}")
        if len(data) < offset + topic_len:
            raise Truncated("topic cut short")
        topic = bytes(data[offset:offset + topic_len])
        offset += topic_len

    remaining = len(data) - offset
    if remaining < payload_len:
        raise Truncated(f"payload_len {payload_len} but {remaining} bytes remain")
    if remaining > payload_len:
        raise InconsistentLength(f"payload_len {payload_len} but {remaining} bytes remain")

    try:
        return Envelope(
            kind=kind,
            source_id=source_id,
            dest_id=dest_id,
            message_id=message_id,
            frag_index=frag_index,
            frag_count=frag_count,
            priority=priority,
            topic=topic,
            payload=bytes(data[offset:]),
        )
    except ValueError as exc:
        raise InconsistentLength(str(exc)) from None


def fragment_capacity(frag_index: int, topic_len: int) -> int:
    """Payload bytes that fit in the given fragment."""
    if frag_index == 0:
        return PAYLOAD_BUDGET - topic_len
    return PAYLOAD_BUDGET


def plan_fragments(payload_len: int, topic_len: int) -> FragmentPlan:
    if topic_len > MAX_NAME_LEN:
        raise OversizeTopic(f"topic of {topic_len} bytes exceeds {MAX_NAME_LEN}")
    if payload_len < 0:
        raise ValueError("payload_len must not be negative")

    first = fragment_capacity(0, topic_len)
    if payload_len <= first:
        return FragmentPlan(payload_len, 1, ((0, payload_len),))

    rest = payload_len - first
    frag_count = 1 + math.ceil(rest / PAYLOAD_BUDGET)
    ranges = [(0, first)]
    for start in range(first, payload_len, PAYLOAD_BUDGET):
        ranges.append((start, min(start + PAYLOAD_BUDGET, payload_len)))
    return FragmentPlan(payload_len, frag_count, tuple(ranges))


def encode_name(name: str) -> bytes:
    raw = name.encode("utf-8")
    if len(raw) > MAX_NAME_LEN:
        raise OversizeTopic(f"name {name!r} exceeds {MAX_NAME_LEN} bytes")
    return bytes((len(raw),)) + raw


def decode_name(payload: bytes) -> str:
    if not payload or payload[0] != len(payload) - 1:
        raise InconsistentLength("malformed length-prefixed name")
    return payload[1:].decode("utf-8", errors="replace")


def node_id_for(name: str) -> int:
    """Stable 64-bit identifier derived from a node name."""
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    value = int.from_bytes(digest, "big")
    # all-ones is reserved for broadcast
    return value - 1 if value == BROADCAST_ID else value
