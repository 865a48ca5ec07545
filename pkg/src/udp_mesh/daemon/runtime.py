"""
Thread layout of the node daemon.

One socket-reader thread, one timer thread, one protocol thread and one
delivery thread. Only the protocol thread touches the MeshNode; every other
thread hands it work through the command queue, so the protocol state is
single-writer and needs no locks.
"""
import logging
import queue
import threading
import time
from concurrent.futures import Future
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Set

from ..bench import BENCH_PRIORITY, BENCH_TOPIC, BenchReport, split_payloads
from ..config import NodeConfig, TopicConfig
from ..errors import MeshError, UnknownTopic
from ..medium.base import Clock, MonotonicClock
from ..medium.factory import MediumFactory
from ..medium.medium_udp import UdpMedium
from ..node import MeshNode, PeerStatus
from ..reliable import TransferEvent, TransferStatus
from ..topics import InboundDelivery, PublishOutcome, Sink

log = logging.getLogger(__name__)

Command = Callable[[float], Any]

RECEIVE_TIMEOUT = 0.1
CALL_TIMEOUT = 5.0


def initial_message_id() -> int:
    """Seed from wall-clock seconds so a restarted sender skips its retained ids."""
    return int(time.time()) % 2**31


@dataclass
class _BenchTracker:
    pending: Set[int] = field(default_factory=set)
    delivered_bytes: int = 0
    aborted: bool = False
    finished_at: Optional[float] = None
    done: threading.Event = field(default_factory=threading.Event)

    def record(self, event: TransferEvent) -> None:
        if event.message_id not in self.pending:
            return
        self.pending.discard(event.message_id)
        if event.status == TransferStatus.COMPLETE:
            self.delivered_bytes += event.payload_bytes
        else:
            self.aborted = True
        if not self.pending or self.aborted:
            self.done.set()


class DaemonRuntime:
    def __init__(self, config: NodeConfig, medium: Optional[UdpMedium] = None, clock: Optional[Clock] = None):
        self.config = config
        self.clock = clock or MonotonicClock()
        self.medium = medium or MediumFactory.create_medium(
            "udp",
            bind_host=config.bind_host,
            port=config.port,
            broadcast_address=config.broadcast_address,
            broadcast_port=config.broadcast_port,
            static_peers=config.static_peer_addresses(),
        )
        self._commands: "queue.Queue[Optional[tuple[Command, Optional[Future]]]]" = queue.Queue()
        self._deliveries: "queue.Queue[Optional[InboundDelivery]]" = queue.Queue()
        self.node = MeshNode(
            config.name,
            self.medium,
            liveness=config.liveness,
            reliable=config.reliable,
            topics=config.topics,
            prioritize=config.prioritization,
            first_message_id=initial_message_id(),
            on_delivery=self._deliveries.put,
            on_transfer=self._on_transfer,
        )
        self._trackers: List[_BenchTracker] = []
        self._stopping = threading.Event()
        self._threads: List[threading.Thread] = []
        self.started_at: Optional[float] = None

    # Lifecycle

    def start(self) -> None:
        self.started_at = self.clock.now()
        self.node.start(self.started_at)
        for name, target in (
            ("protocol", self._protocol_loop),
            ("socket-reader", self._reader_loop),
            ("timer", self._timer_loop),
            ("delivery", self._delivery_loop),
        ):
            thread = threading.Thread(target=target, name=f"udpmesh-{name}", daemon=True)
            thread.start()
            self._threads.append(thread)
        address = self.medium.local_address
        log.info("daemon started name=%s node_id=%016x address=%s:%s", self.config.name, self.node.node_id, *address)

    def stop(self) -> List[TransferEvent]:
        """Abort every transfer, stop the threads and close the socket."""
        if self._stopping.is_set():
            return []
        aborted: List[TransferEvent] = []
        if self._threads:
            try:
                aborted = self.call(self.node.shutdown)
            except Exception:
                log.exception("shutdown command failed")
        self._stopping.set()
        self._commands.put(None)
        self._deliveries.put(None)
        for thread in self._threads:
            thread.join(timeout=2.0)
        self.medium.close()
        log.info("daemon stopped name=%s aborted_transfers=%d", self.config.name, len(aborted))
        return aborted

    # Commands

    def call(self, command: Command, timeout: float = CALL_TIMEOUT) -> Any:
        """Run `command(now)` on the protocol thread and return its result."""
        future: Future = Future()
        self._commands.put((command, future))
        return future.result(timeout)

    def publish(self, topic: str, payload: bytes, dest: Optional[str] = None) -> PublishOutcome:
        return self.call(lambda now: self.node.publish(topic, payload, now, dest))

    def topics(self) -> List[TopicConfig]:
        return self.call(lambda now: self.node.router.topic_configs())

    def set_topics(self, configs: List[TopicConfig]) -> None:
        self.call(lambda now: self.node.router.reconfigure(configs))

    def set_priority(self, topic: str, priority: int) -> TopicConfig:
        def _apply(now: float) -> TopicConfig:
            configs = self.node.router.topic_configs()
            if topic not in {config.name for config in configs}:
                raise UnknownTopic(f"topic {topic!r} is not configured")
            updated = [
                config.model_copy(update={"priority": priority}) if config.name == topic else config
                for config in configs
            ]
            self.node.router.reconfigure(updated)
            return next(config for config in updated if config.name == topic)

        return self.call(_apply)

    def status(self) -> List[PeerStatus]:
        return self.call(self.node.status)

    def stats(self) -> Dict[str, Any]:
        def _collect(now: float) -> Dict[str, Any]:
            return {
                "name": self.config.name,
                "node_id": f"{self.node.node_id:016x}",
                "uptime": round(now - (self.started_at or now), 3),
                "queued_fragments": len(self.node.sched),
                "sched_dropped": self.node.sched.dropped,
                "medium_send_failures": self.node.medium.send_failures,
                "pending_transfers": len(self.node.reliable.pending_transfers()),
                "topic_priorities": self.node.sched.topic_priorities(),
                "counters": self.node.counters.as_dict(),
            }

        return self.call(_collect)

    def subscribe(self, topic: str, sink: Sink) -> None:
        self.node.router.subscribe(topic, sink)

    def unsubscribe(self, topic: str, sink: Sink) -> None:
        self.node.router.unsubscribe(topic, sink)

    def bench(self, dest: str, total_bytes: int, payload_size: int, timeout: float = 120.0) -> BenchReport:
        """Send `total_bytes` to `dest` and time it from first submit to last ack."""
        if total_bytes <= 0:
            return BenchReport(dest, 0, payload_size, 0, 0.0, 0, note="no_payload")
        sizes = split_payloads(total_bytes, payload_size)
        tracker = _BenchTracker()

        def _submit(now: float) -> tuple[float, int]:
            retransmits = self.node.counters.retransmits
            for size in sizes:
                message_id = self.node.reliable.submit(dest, BENCH_TOPIC, bytes(size), BENCH_PRIORITY, now)
                tracker.pending.add(message_id)
            self._trackers.append(tracker)
            self.node.pump(now)
            return now, retransmits

        started, retransmits_before = self.call(_submit)
        finished_in_time = tracker.done.wait(timeout)
        retransmits = self.call(lambda now: self.node.counters.retransmits) - retransmits_before
        self.call(lambda now: self._trackers.remove(tracker))

        note = ""
        if tracker.aborted:
            note = "peer_offline"
        elif not finished_in_time:
            note = "timeout"
        finished = tracker.finished_at or started
        return BenchReport(
            dest=dest,
            total_bytes=total_bytes,
            payload_size=payload_size,
            delivered_bytes=tracker.delivered_bytes,
            duration=finished - started,
            retransmits=retransmits,
            partial=bool(note),
            note=note,
        )

    # Threads

    def _protocol_loop(self) -> None:
        while True:
            item = self._commands.get()
            if item is None:
                return
            command, future = item
            try:
                result = command(self.clock.now())
            except Exception as exc:
                if future is None:
                    if not isinstance(exc, MeshError):
                        log.exception("protocol command failed")
                else:
                    future.set_exception(exc)
            else:
                if future is not None:
                    future.set_result(result)

    def _reader_loop(self) -> None:
        while not self._stopping.is_set():
            received = self.medium.receive(RECEIVE_TIMEOUT)
            if received is None:
                continue
            data, address = received
            self._commands.put((lambda now, d=data, a=address: self.node.on_datagram(d, a, now), None))

    def _timer_loop(self) -> None:
        interval = self.config.reliable.tick_interval
        while not self._stopping.wait(interval):
            self._commands.put((self.node.tick, None))

    def _delivery_loop(self) -> None:
        while True:
            delivery = self._deliveries.get()
            if delivery is None:
                return
            self.node.router.dispatch(delivery)

    def _on_transfer(self, event: TransferEvent) -> None:
        for tracker in self._trackers:
            if event.message_id in tracker.pending:
                if event.status == TransferStatus.COMPLETE:
                    tracker.finished_at = self.clock.now()
                tracker.record(event)
        if event.status == TransferStatus.ABORTED:
            log.info("transfer aborted %s", " ".join(f"{k}={v}" for k, v in asdict(event).items()))
