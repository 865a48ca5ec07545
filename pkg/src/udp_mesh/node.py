"""
Protocol core of one mesh node.

MeshNode wires peers, sched, reliable, multipoint and topics together behind
four entry points: `tick`, `on_datagram`, `publish` and `pump`. Every entry
point takes `now` explicitly and every datagram leaves through a Medium, so
the same object runs unchanged against simnet and against real sockets.
"""
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional

from .config import LivenessConfig, ReliableConfig, TopicConfig
from .errors import DecodeError, MeshError, UnknownTransfer
from .medium.base import Address, Medium
from .multipoint import Multipoint
from .peers import PeerEvent, PeerRecord, PeerTable, make_heartbeat
from .reliable import (
    AbortTransfer,
    MessageComplete,
    PurgeReassembly,
    ReliableTransport,
    Retransmit,
    TransferEvent,
    TransferStatus,
)
from .sched import Scheduler
from .topics import InboundDelivery, PublishOutcome, TopicRouter
from .wire import BROADCAST_ID, Kind, decode_envelope, encode_envelope, node_id_for

log = logging.getLogger(__name__)

PeerListener = Callable[[PeerRecord, PeerEvent, float], None]
TransferListener = Callable[[TransferEvent], None]
DeliveryListener = Callable[[InboundDelivery], None]


@dataclass
class NodeCounters:
    datagrams_sent: int = 0
    datagrams_received: int = 0
    bytes_sent: int = 0
    heartbeats_sent: int = 0
    heartbeats_received: int = 0
    fragments_sent: int = 0
    retransmits: int = 0
    acks_sent: int = 0
    acks_received: int = 0
    stale_acks: int = 0
    broadcasts_sent: int = 0
    deliveries: int = 0
    transfers_completed: int = 0
    transfers_aborted: int = 0
    reassembly_purges: int = 0
    misdirected: int = 0
    fragments_rejected: int = 0
    rejected_submits: int = 0
    decode_errors: Counter = field(default_factory=Counter)

    def as_dict(self) -> dict:
        flat = {name: value for name, value in vars(self).items() if name != "decode_errors"}
        for error, count in sorted(self.decode_errors.items()):
            flat[f"decode_error.{error}"] = count
        return flat


@dataclass(frozen=True, slots=True)
class PeerStatus:
    name: str
    state: str
    last_heard_age: float
    bytes_queued: int
    in_flight: int
    address: str


class MeshNode:
    def __init__(
        self,
        name: str,
        medium: Medium,
        liveness: Optional[LivenessConfig] = None,
        reliable: Optional[ReliableConfig] = None,
        topics: Iterable[TopicConfig] = (),
        prioritize: bool = True,
        first_message_id: int = 0,
        on_delivery: Optional[DeliveryListener] = None,
        on_peer_event: Optional[PeerListener] = None,
        on_transfer: Optional[TransferListener] = None,
    ):
        self.name = name
        self.node_id = node_id_for(name)
        self.medium = medium
        self.liveness = liveness or LivenessConfig()
        self.reliable_config = reliable or ReliableConfig()

        self.peers = PeerTable(self.liveness, self.node_id)
        self.sched = Scheduler(prioritize=prioritize)
        self.reliable = ReliableTransport(
            self.node_id, self.peers, self.sched, self.reliable_config, first_message_id
        )
        self.multipoint = Multipoint(self.node_id, self.peers, self.reliable, self.sched)
        self.router = TopicRouter(self.reliable, self.multipoint, self.sched, topics)

        self.on_delivery = on_delivery
        self.on_peer_event = on_peer_event
        self.on_transfer = on_transfer
        self.counters = NodeCounters()
        self._next_heartbeat: Optional[float] = None
        self._next_sweep: Optional[float] = None

    # Entry points

    def start(self, now: float) -> None:
        """Arm the timers; the first heartbeat goes out on the next tick."""
        self._next_heartbeat = now
        self._next_sweep = now + self.liveness.heartbeat_period

    def tick(self, now: float) -> None:
        if self._next_heartbeat is None:
            self.start(now)

        if now >= self._next_heartbeat:
            self._send_heartbeat(now)
            self._next_heartbeat += self.liveness.heartbeat_period
            if self._next_heartbeat <= now:
                self._next_heartbeat = now + self.liveness.heartbeat_period

        if now >= self._next_sweep:
            for node_id in self.peers.sweep(now):
                self._emit_peer(node_id, PeerEvent.WENT_OFFLINE, now)
            self._next_sweep = now + self.liveness.heartbeat_period

        for action in self.reliable.tick(now):
            if isinstance(action, Retransmit):
                self.counters.retransmits += 1
            elif isinstance(action, AbortTransfer):
                self._emit_transfer(action.event)
            elif isinstance(action, PurgeReassembly):
                self.counters.reassembly_purges += 1
                log.debug("reassembly purged source=%016x message_id=%d", action.source_id, action.message_id)
                if action.marked_offline:
                    self._emit_peer(action.source_id, PeerEvent.WENT_OFFLINE, now)

        self.pump(now)

    def on_datagram(self, data: bytes, from_address: Address, now: float) -> None:
        self.counters.datagrams_received += 1
        try:
            env = decode_envelope(data)
        except DecodeError as exc:
            self.counters.decode_errors[type(exc).__name__] += 1
            log.debug("dropped datagram from=%s error=%s", from_address, exc)
            return
        if env.source_id == self.node_id:
            return

        if env.kind == Kind.HEARTBEAT:
            self.counters.heartbeats_received += 1
            try:
                event = self.peers.observe(env, from_address, now)
            except DecodeError as exc:
                self.counters.decode_errors[type(exc).__name__] += 1
                return
            if event != PeerEvent.REFRESHED:
                self._emit_peer(env.source_id, event, now)

        elif env.kind == Kind.ACK:
            self.counters.acks_received += 1
            try:
                event = self.reliable.on_ack(env, now, from_address)
            except UnknownTransfer:
                self.counters.stale_acks += 1
            else:
                if event.status == TransferStatus.COMPLETE:
                    self._emit_transfer(event)

        elif env.kind == Kind.DATA:
            if env.dest_id != self.node_id:
                self.counters.misdirected += 1
                return
            ack, delivery = self.reliable.on_data(env, now)
            if ack is None:
                self.counters.fragments_rejected += 1
                return
            self._transmit(encode_envelope(ack), from_address)
            self.counters.acks_sent += 1
            if isinstance(delivery, MessageComplete):
                self._deliver(delivery, now)

        elif env.kind == Kind.BCAST_DATA:
            try:
                complete = self.multipoint.on_broadcast_data(env)
            except DecodeError as exc:
                self.counters.decode_errors[type(exc).__name__] += 1
                return
            self._deliver(complete, now)

        self.pump(now)

    def publish(self, topic: str, payload: bytes, now: float, dest: Optional[str] = None) -> PublishOutcome:
        try:
            outcome = self.router.publish(topic, payload, now, dest)
        except MeshError:
            self.counters.rejected_submits += 1
            raise
        self.pump(now)
        return outcome

    def pump(self, now: float) -> int:
        """Transmit queued fragments until no destination has a free slot."""
        sent = 0
        while True:
            frag = self.sched.dequeue_eligible(self.reliable.window_state(), self.peers.is_online)
            if frag is None:
                return sent
            if frag.dest_id == BROADCAST_ID:
                env = self.multipoint.take_for_transmit(frag)
                if env is None:
                    continue
                self._transmit_broadcast(encode_envelope(env))
                self.counters.broadcasts_sent += 1
            else:
                env = self.reliable.take_for_transmit(frag, now)
                if env is None:
                    continue
                self._transmit(encode_envelope(env), self.peers.get(frag.dest_id).address)
                self.counters.fragments_sent += 1
            sent += 1

    def shutdown(self, now: float) -> List[TransferEvent]:
        events = self.reliable.abort_all(now)
        for event in events:
            self._emit_transfer(event)
        return events

    # Reporting

    def status(self, now: float) -> List[PeerStatus]:
        return [
            PeerStatus(
                name=record.name,
                state=record.state.value,
                last_heard_age=round(now - record.last_heard, 3),
                bytes_queued=self.sched.queued_bytes(record.node_id),
                in_flight=self.reliable.in_flight(record.node_id),
                address=f"{record.address[0]}:{record.address[1]}",
            )
            for record in self.peers.peer_snapshot()
        ]

    # Internals

    def _send_heartbeat(self, now: float) -> None:
        self._transmit_broadcast(encode_envelope(make_heartbeat(self.node_id, self.name, now)))
        self.counters.heartbeats_sent += 1

    def _transmit(self, datagram: bytes, address: Address) -> None:
        self.medium.send(datagram, address)
        self.counters.datagrams_sent += 1
        self.counters.bytes_sent += len(datagram)

    def _transmit_broadcast(self, datagram: bytes) -> None:
        self.medium.broadcast(datagram)
        self.counters.datagrams_sent += 1
        self.counters.bytes_sent += len(datagram)

    def _deliver(self, complete: MessageComplete, now: float) -> None:
        source = self.peers.name_of(complete.source_id) or f"{complete.source_id:016x}"
        delivery = InboundDelivery(source, complete.topic, complete.payload, now)
        self.counters.deliveries += 1
        if self.on_delivery is not None:
            self.on_delivery(delivery)
        else:
            self.router.dispatch(delivery)

    def _emit_peer(self, node_id: int, event: PeerEvent, now: float) -> None:
        record = self.peers.get(node_id)
        if record is None:
            return
        log.info(
            "peer event=%s node=%s name=%s node_id=%016x address=%s:%s",
            event.value, self.name, record.name, node_id, record.address[0], record.address[1],
        )
        if self.on_peer_event is not None:
            self.on_peer_event(record, event, now)

    def _emit_transfer(self, event: TransferEvent) -> None:
        if event.status == TransferStatus.COMPLETE:
            self.counters.transfers_completed += 1
        else:
            self.counters.transfers_aborted += 1
        log.debug(
            "transfer status=%s node=%s dest=%016x message_id=%d topic=%s bytes=%d fragments=%d retransmits=%d duration=%.3f",
            event.status.value, self.name, event.dest_id, event.message_id, event.topic,
            event.payload_bytes, event.fragments_sent, event.retransmits, event.duration,
        )
        if self.on_transfer is not None:
            self.on_transfer(event)
