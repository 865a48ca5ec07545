"""
Single broadcast domain with per-directed-pair link quality.

Each directed link serializes datagrams at its bandwidth, adds base latency
plus uniform jitter, and never reorders (arrival times are clamped to be
non-decreasing per link). Loss and jitter draw from one seeded RNG, so a
given seed and send sequence always yields the same trace.
"""
import random
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Callable, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..errors import NoLink
from ..medium.base import Address
from .clock import SimClock

Receiver = Callable[[bytes, Address, float], None]


class LinkState(StrEnum):
    UP = "up"
    DOWN = "down"


class LinkWindow(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    start: float = Field(ge=0)
    end: float
    state: LinkState = LinkState.DOWN

    @model_validator(mode="after")
    def _ordered(self):
        if self.end <= self.start:
            raise ValueError("window end must be after start")
        return self


class LinkModel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    loss_probability: float = Field(0.0, ge=0.0, le=1.0)
    latency_base: float = Field(0.001, ge=0)
    latency_jitter: float = Field(0.0, ge=0)
    bandwidth: float = Field(10_000_000.0, gt=0)
    schedule: List[LinkWindow] = Field(default_factory=list)

    @model_validator(mode="after")
    def _non_overlapping(self):
        windows = sorted(self.schedule, key=lambda w: w.start)
        for earlier, later in zip(windows, windows[1:]):
            if later.start < earlier.end:
                raise ValueError("link schedule windows overlap")
        return self

    def state_at(self, t: float) -> LinkState:
        for window in self.schedule:
            if window.start <= t < window.end:
                return window.state
        return LinkState.UP

    def serialization_delay(self, size: int) -> float:
        return size * 8 / self.bandwidth


@dataclass(slots=True)
class _LinkRuntime:
    model: LinkModel
    busy_until: float = 0.0
    last_arrival: float = 0.0
    sent: int = 0
    dropped: int = 0


@dataclass(slots=True)
class NetworkCounters:
    sent: int = 0
    delivered: int = 0
    dropped: int = 0
    bytes_sent: int = 0
    per_link: Dict[Tuple[str, str], int] = field(default_factory=dict)


class SimNetwork:
    def __init__(self, clock: SimClock, seed: int = 0):
        self.clock = clock
        self.rng = random.Random(seed)
        self._receivers: Dict[str, Receiver] = {}
        self._links: Dict[Tuple[str, str], _LinkRuntime] = {}
        self.counters = NetworkCounters()

    def add_node(self, name: str, receiver: Receiver) -> Address:
        self._receivers[name] = receiver
        return address_of(name)

    def connect(self, a: str, b: str, model: LinkModel, symmetric: bool = True) -> None:
        self._links[(a, b)] = _LinkRuntime(model)
        if symmetric:
            self._links[(b, a)] = _LinkRuntime(model)

    def link(self, src: str, dst: str) -> Optional[LinkModel]:
        runtime = self._links.get((src, dst))
        return runtime.model if runtime else None

    def nodes(self) -> List[str]:
        return list(self._receivers)

    def deliver(self, datagram: bytes, src: str, dst: str, now: float) -> Optional[float]:
        """
        Put one datagram on the src->dst link. Returns the scheduled arrival
        time, or None when the datagram is dropped.
        """
        link = self._links.get((src, dst))
        if link is None or dst not in self._receivers:
            raise NoLink(f"no link {src} -> {dst}")
        model = link.model
        self.counters.sent += 1
        self.counters.bytes_sent += len(datagram)
        link.sent += 1

        if model.state_at(now) == LinkState.DOWN:
            return self._drop(link)
        lost = self.rng.random() < model.loss_probability
        start = max(now, link.busy_until)
        link.busy_until = start + model.serialization_delay(len(datagram))
        if lost:
            return self._drop(link)

        jitter = self.rng.uniform(-model.latency_jitter, model.latency_jitter) if model.latency_jitter else 0.0
        arrival = max(link.busy_until + max(model.latency_base + jitter, 0.0), link.last_arrival, now)
        link.last_arrival = arrival

        receiver = self._receivers[dst]
        source = address_of(src)
        self.clock.schedule(arrival, lambda t: receiver(datagram, source, t))
        self.counters.delivered += 1
        key = (src, dst)
        self.counters.per_link[key] = self.counters.per_link.get(key, 0) + 1
        return arrival

    def broadcast_deliver(self, datagram: bytes, src: str, now: float) -> Dict[str, Optional[float]]:
        """Independent deliver() per linked peer; unlinked peers never receive."""
        outcomes: Dict[str, Optional[float]] = {}
        for dst in self._receivers:
            if dst != src and (src, dst) in self._links:
                outcomes[dst] = self.deliver(datagram, src, dst, now)
        return outcomes

    def _drop(self, link: _LinkRuntime) -> None:
        link.dropped += 1
        self.counters.dropped += 1
        return None


def address_of(name: str) -> Address:
    return name, 0
