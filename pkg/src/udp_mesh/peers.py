"""
Discovery, name resolution and Online/Offline liveness.

Heartbeats and acks are the only liveness evidence. Records are never
deleted; a peer that goes quiet is marked Offline and comes back Online on
its next heartbeat.
"""
import dataclasses
import logging
from dataclasses import dataclass
from enum import StrEnum
from typing import Dict, List, Optional, Tuple

from .config import LivenessConfig
from .errors import AckFromUnknownPeer, BadHeartbeat, InconsistentLength, NotFound
from .medium.base import Address
from .wire import BROADCAST_ID, Envelope, Kind, decode_name, encode_name, node_id_for

log = logging.getLogger(__name__)


class PeerState(StrEnum):
    ONLINE = "online"
    OFFLINE = "offline"


class PeerEvent(StrEnum):
    DISCOVERED = "discovered"
    REFRESHED = "refreshed"
    CAME_ONLINE = "came_online"
    WENT_OFFLINE = "went_offline"


@dataclass(slots=True)
class PeerRecord:
    node_id: int
    name: str
    address: Address
    last_heard: float
    state: PeerState = PeerState.ONLINE


def make_heartbeat(self_id: int, self_name: str, now: float) -> Envelope:
    """
    Build the periodic discovery broadcast. Heartbeats carry no sequence
    number or timestamp, so `now` does not change the envelope.
    """
    return Envelope(
        kind=Kind.HEARTBEAT,
        source_id=self_id,
        dest_id=BROADCAST_ID,
        payload=encode_name(self_name),
    )


class PeerTable:
    """Single-writer peer table owned by the protocol thread."""

    def __init__(self, config: LivenessConfig, self_id: int):
        self.config = config
        self.self_id = self_id
        self._records: Dict[int, PeerRecord] = {}
        self._by_name: Dict[str, int] = {}

    def observe(self, env: Envelope, from_address: Address, now: float) -> PeerEvent:
        if env.kind == Kind.ACK:
            record = self._records.get(env.source_id)
            if record is None:
                raise AckFromUnknownPeer(f"ack from unknown node {env.source_id:016x}")
            record.last_heard = now
            record.address = from_address
            return PeerEvent.REFRESHED

        if env.kind != Kind.HEARTBEAT:
            raise ValueError(f"{env.kind.name} is not liveness evidence")
        if env.dest_id != BROADCAST_ID:
            raise BadHeartbeat(f"heartbeat addressed to {env.dest_id:016x}")

        try:
            name = decode_name(env.payload)
        except InconsistentLength as exc:
            raise BadHeartbeat(str(exc)) from None
        if node_id_for(name) != env.source_id:
            raise BadHeartbeat(f"name {name!r} does not hash to {env.source_id:016x}")

        record = self._records.get(env.source_id)
        if record is None:
            self._records[env.source_id] = PeerRecord(env.source_id, name, from_address, now)
            self._by_name[name] = env.source_id
            return PeerEvent.DISCOVERED

        record.last_heard = now
        record.address = from_address
        if record.state == PeerState.OFFLINE:
            record.state = PeerState.ONLINE
            return PeerEvent.CAME_ONLINE
        return PeerEvent.REFRESHED

    def sweep(self, now: float) -> List[int]:
        went_offline = []
        for record in self._records.values():
            if record.state == PeerState.ONLINE and now - record.last_heard > self.config.offline_timeout:
                record.state = PeerState.OFFLINE
                went_offline.append(record.node_id)
        return went_offline

    def mark_offline(self, node_id: int) -> bool:
        """Force a peer Offline. Returns True if this was a transition."""
        record = self._records.get(node_id)
        if record is None or record.state == PeerState.OFFLINE:
            return False
        record.state = PeerState.OFFLINE
        return True

    def resolve(self, name: str) -> Tuple[int, Address]:
        node_id = self._by_name.get(name)
        if node_id is None:
            raise NotFound(f"no peer named {name!r} has been discovered")
        record = self._records[node_id]
        return node_id, record.address

    def peer_snapshot(self) -> List[PeerRecord]:
        return [dataclasses.replace(record) for record in self._records.values()]

    def get(self, node_id: int) -> Optional[PeerRecord]:
        return self._records.get(node_id)

    def name_of(self, node_id: int) -> Optional[str]:
        record = self._records.get(node_id)
        return record.name if record else None

    def is_online(self, node_id: int) -> bool:
        record = self._records.get(node_id)
        return record is not None and record.state == PeerState.ONLINE

    def online_ids(self) -> List[int]:
        return [r.node_id for r in self._records.values() if r.state == PeerState.ONLINE]

    def __len__(self) -> int:
        return len(self._records)
