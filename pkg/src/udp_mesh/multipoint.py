"""
Point-to-multipoint delivery.

A message that fits one datagram goes out as a single unacknowledged
broadcast. Anything larger is fanned out as one reliable transfer per Online
peer. Receivers get the same MessageComplete either way.
"""
from dataclasses import dataclass
from enum import StrEnum
from typing import Dict, Optional, Tuple

from .errors import FragmentedBroadcast
from .peers import PeerTable
from .reliable import MessageComplete, ReliableTransport
from .sched import QueuedFragment, Scheduler
from .wire import BROADCAST_ID, Envelope, Kind, plan_fragments


class BroadcastPath(StrEnum):
    SINGLE_DATAGRAM = "single_datagram"
    FAN_OUT = "fan_out"


@dataclass(frozen=True, slots=True)
class BroadcastOutcome:
    path: BroadcastPath
    message_ids: Tuple[int, ...] = ()


class Multipoint:
    def __init__(self, self_id: int, peers: PeerTable, reliable: ReliableTransport, sched: Scheduler):
        self.self_id = self_id
        self.peers = peers
        self.reliable = reliable
        self.sched = sched
        self._pending: Dict[int, Envelope] = {}

    def broadcast(self, topic: str, payload: bytes, priority: int, now: float = 0.0) -> BroadcastOutcome:
        topic_bytes = topic.encode("utf-8")
        plan = plan_fragments(len(payload), len(topic_bytes))
        if plan.frag_count == 1:
            message_id = self.reliable.next_message_id()
            self._pending[message_id] = Envelope(
                kind=Kind.BCAST_DATA,
                source_id=self.self_id,
                dest_id=BROADCAST_ID,
                message_id=message_id,
                priority=priority,
                topic=topic_bytes,
                payload=payload,
            )
            self.sched.push(BROADCAST_ID, message_id, 0, priority, len(payload))
            return BroadcastOutcome(BroadcastPath.SINGLE_DATAGRAM, (message_id,))

        # peer set is sampled once; late joiners do not receive this message
        message_ids = tuple(
            self.reliable.submit_to(peer_id, topic, payload, priority, now)
            for peer_id in self.peers.online_ids()
        )
        return BroadcastOutcome(BroadcastPath.FAN_OUT, message_ids)

    def take_for_transmit(self, frag: QueuedFragment) -> Optional[Envelope]:
        return self._pending.pop(frag.message_id, None)

    def on_broadcast_data(self, env: Envelope) -> MessageComplete:
        """No ack and no duplicate suppression on this path."""
        if env.kind != Kind.BCAST_DATA:
            raise ValueError(f"{env.kind.name} is not a broadcast datagram")
        if env.frag_count != 1:
            raise FragmentedBroadcast(f"broadcast fragment {env.frag_index} of {env.frag_count}")
        topic = env.topic.decode("utf-8", errors="replace")
        return MessageComplete(env.source_id, env.message_id, topic, env.payload)

    def pending(self) -> int:
        return len(self._pending)
