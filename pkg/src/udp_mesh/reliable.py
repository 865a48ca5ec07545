"""
Guaranteed point-to-point transfer.

Outbound messages are split per `plan_fragments`, every fragment is handed to
the scheduler, and at most `window` fragments per destination are unacked at
any instant. Each fragment is acked individually. Unacked fragments are
re-queued with exponential backoff until they are acked or the destination
goes Offline.
"""
import logging
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Dict, List, Optional, Set, Tuple, Union

from .config import ReliableConfig
from .errors import AckFromUnknownPeer, NotFound, PeerOffline, UnknownPeer, UnknownTransfer
from .peers import Address, PeerTable
from .sched import QueuedFragment, Scheduler
from .wire import Envelope, Kind, plan_fragments

log = logging.getLogger(__name__)

MESSAGE_ID_MASK = 0xFFFF_FFFF


@dataclass(slots=True)
class OutboundTransfer:
    dest_id: int
    message_id: int
    priority: int
    topic: str
    fragments: List[Envelope]
    enqueue_seq: int
    created_at: float
    acked: Set[int] = field(default_factory=set)
    in_flight: Dict[int, float] = field(default_factory=dict)
    rto: Dict[int, float] = field(default_factory=dict)
    next_unsent: int = 0
    fragments_sent: int = 0
    retransmits: int = 0

    @property
    def frag_count(self) -> int:
        return len(self.fragments)

    @property
    def complete(self) -> bool:
        return len(self.acked) == self.frag_count

    @property
    def payload_bytes(self) -> int:
        return sum(len(env.payload) for env in self.fragments)


@dataclass(slots=True)
class ReassemblyBuffer:
    source_id: int
    message_id: int
    frag_count: int
    last_activity: float
    received: Dict[int, bytes] = field(default_factory=dict)
    topic: Optional[bytes] = None


class TransferStatus(StrEnum):
    PROGRESS = "progress"
    COMPLETE = "complete"
    ABORTED = "aborted"


@dataclass(frozen=True, slots=True)
class TransferEvent:
    status: TransferStatus
    dest_id: int
    message_id: int
    topic: str
    payload_bytes: int
    fragments_sent: int
    retransmits: int
    duration: float


@dataclass(frozen=True, slots=True)
class FragmentStored:
    source_id: int
    message_id: int
    frag_index: int
    duplicate: bool = False


@dataclass(frozen=True, slots=True)
class MessageComplete:
    source_id: int
    message_id: int
    topic: str
    payload: bytes


@dataclass(frozen=True, slots=True)
class FragmentRejected:
    source_id: int
    message_id: int
    frag_index: int


DeliveryEvent = Union[FragmentStored, FragmentRejected, MessageComplete]


@dataclass(frozen=True, slots=True)
class Retransmit:
    env: Envelope


@dataclass(frozen=True, slots=True)
class PurgeReassembly:
    source_id: int
    message_id: int
    marked_offline: bool = False


@dataclass(frozen=True, slots=True)
class AbortTransfer:
    message_id: int
    event: TransferEvent


Action = Union[Retransmit, PurgeReassembly, AbortTransfer]


class ReliableTransport:
    def __init__(
        self,
        self_id: int,
        peers: PeerTable,
        sched: Scheduler,
        config: ReliableConfig,
        first_message_id: int = 0,
    ):
        self.self_id = self_id
        self.peers = peers
        self.sched = sched
        self.config = config
        self._next_message_id = first_message_id & MESSAGE_ID_MASK
        self._outbound: Dict[int, Dict[int, OutboundTransfer]] = {}
        self._in_flight: Dict[int, int] = {}
        self._deadlines: Dict[Tuple[int, int, int], float] = {}
        self._inbound: Dict[Tuple[int, int], ReassemblyBuffer] = {}
        self._completed: Dict[Tuple[int, int], float] = {}
        self.max_in_flight: Dict[int, int] = {}
        self.stale_acks = 0

    def next_message_id(self) -> int:
        message_id = self._next_message_id
        self._next_message_id = (message_id + 1) & MESSAGE_ID_MASK
        return message_id

    # Sender side

    def submit(self, dest: str, topic: str, payload: bytes, priority: int, now: float = 0.0) -> int:
        """
        Queue a message for guaranteed delivery to a named peer.

        Raises:
            UnknownPeer: dest was never discovered
            PeerOffline: dest is known but Offline; nothing is queued
        """
        try:
            dest_id, _ = self.peers.resolve(dest)
        except NotFound:
            raise UnknownPeer(f"unknown peer {dest!r}") from None
        return self.submit_to(dest_id, topic, payload, priority, now)

    def submit_to(self, dest_id: int, topic: str, payload: bytes, priority: int, now: float = 0.0) -> int:
        if not self.peers.is_online(dest_id):
            raise PeerOffline(f"peer {self.peers.name_of(dest_id) or hex(dest_id)} is offline")

        topic_bytes = topic.encode("utf-8")
        plan = plan_fragments(len(payload), len(topic_bytes))
        message_id = self.next_message_id()
        fragments = [
            Envelope(
                kind=Kind.DATA,
                source_id=self.self_id,
                dest_id=dest_id,
                message_id=message_id,
                frag_index=index,
                frag_count=plan.frag_count,
                priority=priority,
                topic=topic_bytes if index == 0 else None,
                payload=payload[start:end],
            )
            for index, (start, end) in enumerate(plan.ranges)
        ]
        queued = [
            self.sched.push(dest_id, message_id, env.frag_index, priority, len(env.payload))
            for env in fragments
        ]
        self._outbound.setdefault(dest_id, {})[message_id] = OutboundTransfer(
            dest_id=dest_id,
            message_id=message_id,
            priority=priority,
            topic=topic,
            fragments=fragments,
            enqueue_seq=queued[0].enqueue_seq,
            created_at=now,
        )
        return message_id

    def window_state(self) -> Dict[int, int]:
        """Free window slots per destination with live transfers."""
        window = self.config.window
        state: Dict[int, int] = {}
        for dest_id in self._outbound:
            state[dest_id] = window - self._in_flight.get(dest_id, 0)
        return state

    def take_for_transmit(self, frag: QueuedFragment, now: float) -> Optional[Envelope]:
        """
        Move a dequeued fragment into flight. Returns None for stale queue
        entries (transfer finished, fragment already acked or in flight).
        """
        transfer = self._outbound.get(frag.dest_id, {}).get(frag.message_id)
        if transfer is None:
            return None
        index = frag.frag_index
        if index in transfer.acked or index in transfer.in_flight:
            return None
        in_flight = self._in_flight.get(frag.dest_id, 0)
        if in_flight >= self.config.window:
            self.sched.enqueue(frag)
            return None

        if index < transfer.next_unsent:
            transfer.retransmits += 1
        rto = transfer.rto.setdefault(index, self.config.retransmit_initial)
        transfer.in_flight[index] = now + rto
        self._deadlines[(frag.dest_id, frag.message_id, index)] = now + rto
        transfer.next_unsent = max(transfer.next_unsent, index + 1)
        transfer.fragments_sent += 1
        self._in_flight[frag.dest_id] = in_flight + 1
        if in_flight + 1 > self.max_in_flight.get(frag.dest_id, 0):
            self.max_in_flight[frag.dest_id] = in_flight + 1
        return transfer.fragments[index]

    def on_ack(self, env: Envelope, now: float, from_address: Optional[Address] = None) -> TransferEvent:
        if env.kind != Kind.ACK:
            raise ValueError(f"{env.kind.name} is not an ack")
        if from_address is not None:
            try:
                self.peers.observe(env, from_address, now)
            except AckFromUnknownPeer:
                pass

        transfer = self._outbound.get(env.source_id, {}).get(env.message_id)
        if transfer is None or env.frag_index >= transfer.frag_count:
            self.stale_acks += 1
            raise UnknownTransfer(f"no transfer {env.message_id} to {env.source_id:016x}")

        index = env.frag_index
        if index not in transfer.acked:
            transfer.acked.add(index)
            if transfer.in_flight.pop(index, None) is not None:
                del self._deadlines[(transfer.dest_id, transfer.message_id, index)]
                self._release_slot(transfer.dest_id)

        if transfer.complete:
            self._finish(transfer)
            return self._event(transfer, TransferStatus.COMPLETE, now)
        return self._event(transfer, TransferStatus.PROGRESS, now)

    def pending_transfers(self, dest_id: Optional[int] = None) -> List[OutboundTransfer]:
        if dest_id is not None:
            return list(self._outbound.get(dest_id, {}).values())
        return [t for transfers in self._outbound.values() for t in transfers.values()]

    def in_flight(self, dest_id: int) -> int:
        return self._in_flight.get(dest_id, 0)

    def abort_all(self, now: float) -> List[TransferEvent]:
        events = []
        for transfer in self.pending_transfers():
            self._finish(transfer)
            events.append(self._event(transfer, TransferStatus.ABORTED, now))
        return events

    # Receiver side

    def on_data(self, env: Envelope, now: float) -> Tuple[Optional[Envelope], DeliveryEvent]:
        """
        Store one fragment. The returned ack must be sent even for duplicates,
        since the sender may have lost the first one.

        A fragment whose frag_count disagrees with the open buffer is not
        stored and not acked (ack is None), so the sender retransmits it.
        """
        if env.kind != Kind.DATA:
            raise ValueError(f"{env.kind.name} is not a data fragment")

        ack = Envelope(
            kind=Kind.ACK,
            source_id=self.self_id,
            dest_id=env.source_id,
            message_id=env.message_id,
            frag_index=env.frag_index,
            frag_count=env.frag_count,
            priority=env.priority,
        )
        key = (env.source_id, env.message_id)
        if key in self._completed:
            return ack, FragmentStored(env.source_id, env.message_id, env.frag_index, duplicate=True)

        buffer = self._inbound.get(key)
        if buffer is None:
            buffer = ReassemblyBuffer(env.source_id, env.message_id, env.frag_count, now)
            self._inbound[key] = buffer
        elif buffer.frag_count != env.frag_count:
            log.debug("fragment disagrees on frag_count source=%016x message_id=%d", *key)
            return None, FragmentRejected(env.source_id, env.message_id, env.frag_index)

        buffer.last_activity = now
        duplicate = env.frag_index in buffer.received
        if not duplicate:
            buffer.received[env.frag_index] = env.payload
            if env.frag_index == 0:
                buffer.topic = env.topic

        if len(buffer.received) < buffer.frag_count:
            return ack, FragmentStored(env.source_id, env.message_id, env.frag_index, duplicate)

        del self._inbound[key]
        self._completed[key] = now
        payload = b"".join(buffer.received[index] for index in range(buffer.frag_count))
        topic = buffer.topic.decode("utf-8", errors="replace")
        return ack, MessageComplete(env.source_id, env.message_id, topic, payload)

    def reassembly_buffers(self) -> List[ReassemblyBuffer]:
        return list(self._inbound.values())

    # Timers

    def tick(self, now: float) -> List[Action]:
        actions: List[Action] = []

        for key, buffer in list(self._inbound.items()):
            if now - buffer.last_activity > self.config.reassembly_timeout:
                del self._inbound[key]
                marked = self.peers.mark_offline(buffer.source_id)
                actions.append(PurgeReassembly(buffer.source_id, buffer.message_id, marked))

        for dest_id in list(self._outbound):
            if self.peers.is_online(dest_id):
                continue
            for transfer in list(self._outbound[dest_id].values()):
                self._finish(transfer)
                event = self._event(transfer, TransferStatus.ABORTED, now)
                actions.append(AbortTransfer(transfer.message_id, event))

        expired = [key for key, deadline in self._deadlines.items() if now >= deadline]
        for dest_id, message_id, index in expired:
            transfer = self._outbound[dest_id][message_id]
            del self._deadlines[(dest_id, message_id, index)]
            del transfer.in_flight[index]
            self._release_slot(dest_id)
            transfer.rto[index] = min(transfer.rto[index] * 2, self.config.retransmit_max)
            self.sched.push(dest_id, message_id, index, transfer.priority,
                            len(transfer.fragments[index].payload))
            actions.append(Retransmit(transfer.fragments[index]))

        # insertion order is completion order
        horizon = now - self.config.completed_retention
        while self._completed:
            key, finished_at = next(iter(self._completed.items()))
            if finished_at >= horizon:
                break
            del self._completed[key]

        return actions

    def _release_slot(self, dest_id: int) -> None:
        remaining = self._in_flight.get(dest_id, 0) - 1
        if remaining > 0:
            self._in_flight[dest_id] = remaining
        else:
            self._in_flight.pop(dest_id, None)

    def _finish(self, transfer: OutboundTransfer) -> None:
        transfers = self._outbound[transfer.dest_id]
        del transfers[transfer.message_id]
        if not transfers:
            del self._outbound[transfer.dest_id]
        for index in transfer.in_flight:
            del self._deadlines[(transfer.dest_id, transfer.message_id, index)]
            self._release_slot(transfer.dest_id)
        transfer.in_flight.clear()
        self.sched.discard(transfer.dest_id, transfer.message_id)

    @staticmethod
    def _event(transfer: OutboundTransfer, status: TransferStatus, now: float) -> TransferEvent:
        return TransferEvent(
            status=status,
            dest_id=transfer.dest_id,
            message_id=transfer.message_id,
            topic=transfer.topic,
            payload_bytes=transfer.payload_bytes,
            fragments_sent=transfer.fragments_sent,
            retransmits=transfer.retransmits,
            duration=now - transfer.created_at,
        )
