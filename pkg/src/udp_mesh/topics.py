"""
Middleware-agnostic topic routing.

Payloads are opaque: nothing here reads, parses or transforms them. Type
binding belongs to the reader/writer adapters on either side of the local bus.
"""
import logging
import threading
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Union

from .config import DeliveryMode, TopicConfig
from .errors import DuplicateTopicName, UnknownTopic
from .multipoint import BroadcastOutcome, Multipoint
from .reliable import ReliableTransport
from .sched import Scheduler

log = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class InboundDelivery:
    source_name: str
    topic: str
    payload: bytes
    arrival_time: float


Sink = Callable[[InboundDelivery], None]
PublishOutcome = Union[int, BroadcastOutcome]


class TopicRouter:
    def __init__(
        self,
        reliable: ReliableTransport,
        multipoint: Multipoint,
        sched: Scheduler,
        configs: Iterable[TopicConfig] = (),
    ):
        self.reliable = reliable
        self.multipoint = multipoint
        self.sched = sched
        self._topics: Dict[str, TopicConfig] = {}
        self._sinks: Dict[str, List[Sink]] = {}
        self._sinks_lock = threading.Lock()
        self.reconfigure(list(configs))

    def reconfigure(self, configs: List[TopicConfig]) -> None:
        """
        Replace the topic table. Queued fragments keep the priority they were
        enqueued with; new priorities apply to later publishes.
        """
        table: Dict[str, TopicConfig] = {}
        for config in configs:
            if config.name in table:
                raise DuplicateTopicName(f"topic {config.name!r} configured twice")
            table[config.name] = config
        for config in table.values():
            self.sched.set_topic_priority(config.name, config.priority)
        self._topics = table

    def topic_configs(self) -> List[TopicConfig]:
        return list(self._topics.values())

    def publish(self, topic: str, payload: bytes, now: float = 0.0, dest: Optional[str] = None) -> PublishOutcome:
        """
        Route one message per the topic's delivery mode.

        Args:
            topic: Configured topic name
            payload: Serialized message bytes, passed through untouched
            now: Current time
            dest: Optional destination override; forces reliable unicast

        Returns:
            The message_id for reliable sends, a BroadcastOutcome otherwise
        """
        config = self._topics.get(topic)
        if config is None:
            raise UnknownTopic(f"topic {topic!r} is not configured")
        priority = self.sched.priority_for(topic)
        if dest is not None or config.mode == DeliveryMode.RELIABLE:
            return self.reliable.submit(dest or config.dest, topic, payload, priority, now)
        return self.multipoint.broadcast(topic, payload, priority, now)

    def subscribe(self, topic: str, sink: Sink) -> None:
        with self._sinks_lock:
            self._sinks.setdefault(topic, []).append(sink)

    def unsubscribe(self, topic: str, sink: Sink) -> None:
        with self._sinks_lock:
            sinks = self._sinks.get(topic, [])
            if sink in sinks:
                sinks.remove(sink)

    def dispatch(self, delivery: InboundDelivery) -> int:
        """Hand a delivery to every sink on its topic. Returns the sink count."""
        with self._sinks_lock:
            sinks = list(self._sinks.get(delivery.topic, ()))
        for sink in sinks:
            try:
                sink(delivery)
            except Exception:
                log.exception("sink failed topic=%s source=%s", delivery.topic, delivery.source_name)
        return len(sinks)
