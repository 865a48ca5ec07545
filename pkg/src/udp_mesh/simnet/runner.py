"""
Scenario execution and run statistics.

The runner builds one MeshNode per scenario node on top of a SimMedium,
ticks every node on its own phase, fires the traffic generators, and
collects RunStats from delivery, peer and transfer hooks.
"""
import csv
import logging
import random
from collections import defaultdict
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..errors import MeshError
from ..medium.base import Address
from ..medium.factory import MediumFactory
from ..multipoint import BroadcastOutcome, BroadcastPath
from ..node import MeshNode
from ..peers import PeerEvent, PeerRecord
from ..topics import InboundDelivery
from .clock import SimClock
from .network import SimNetwork
from .scenario import GeneratorSpec, Scenario, load_scenario

log = logging.getLogger(__name__)

REFERENCE_MEAN = 1.00
REFERENCE_STD = 0.04

ArrivalKey = Tuple[str, str, str]


@dataclass
class RunStats:
    scenario: str
    seed: int
    duration: float
    topic_bytes_submitted: Dict[str, int] = field(default_factory=dict)
    topic_bytes_delivered: Dict[str, int] = field(default_factory=dict)
    arrivals: Dict[ArrivalKey, List[float]] = field(default_factory=dict)
    connectivity: Dict[Tuple[str, str], List[Tuple[float, str]]] = field(default_factory=dict)
    counters: Dict[str, int] = field(default_factory=dict)
    max_in_flight: Dict[Tuple[str, str], int] = field(default_factory=dict)
    publish_rejected: Dict[str, int] = field(default_factory=dict)
    events_processed: int = 0

    def intervals(self, source: str, topic: str, receiver: Optional[str] = None) -> np.ndarray:
        """Intermessage arrival samples for one (source, topic), optionally one receiver."""
        samples = [
            np.diff(np.asarray(times))
            for (src, top, rcv), times in self.arrivals.items()
            if src == source and top == topic and (receiver is None or rcv == receiver)
        ]
        return np.concatenate(samples) if samples else np.empty(0)

    def arrival_summary(self, source: str, topic: str, receiver: Optional[str] = None) -> Tuple[float, float, int]:
        samples = self.intervals(source, topic, receiver)
        if samples.size == 0:
            return float("nan"), float("nan"), 0
        std = float(np.std(samples, ddof=1)) if samples.size > 1 else 0.0
        return float(np.mean(samples)), std, int(samples.size)

    def topic_fraction(self, topic: str) -> float:
        total = sum(self.topic_bytes_delivered.values())
        return self.topic_bytes_delivered.get(topic, 0) / total if total else 0.0

    def heartbeats_received_per_second(self) -> float:
        return self.counters.get("heartbeats_received", 0) / self.duration if self.duration else 0.0

    def connectivity_intervals(self) -> List[Tuple[str, str, float, float, str]]:
        """Online/offline intervals per (observer, peer) covering [0, duration]."""
        rows = []
        for (observer, peer), transitions in sorted(self.connectivity.items()):
            start, state = 0.0, "offline"
            for at, new_state in transitions:
                if new_state == state:
                    continue
                if at > start:
                    rows.append((observer, peer, start, at, state))
                start, state = at, new_state
            rows.append((observer, peer, start, self.duration, state))
        return rows


class ScenarioRunner:
    def __init__(self, scenario: Scenario, seed: Optional[int] = None):
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.clock = SimClock()
        self.network = SimNetwork(self.clock, self.seed)
        # payloads and timer phases only; link loss draws stay on the network rng
        self.rng = random.Random(self.seed + 1)
        self.stats = RunStats(scenario.name, self.seed, scenario.duration)
        self._submitted: Dict[str, int] = defaultdict(int)
        self._delivered: Dict[str, int] = defaultdict(int)
        self._arrivals: Dict[ArrivalKey, List[float]] = defaultdict(list)
        self._connectivity: Dict[Tuple[str, str], List[Tuple[float, str]]] = defaultdict(list)
        self._rejected: Dict[str, int] = defaultdict(int)
        self.nodes: Dict[str, MeshNode] = {}
        self._started = False
        self._build()

    def _build(self) -> None:
        scenario = self.scenario
        for spec in scenario.nodes:
            medium = MediumFactory.create_medium("sim", network=self.network, name=spec.name)
            node = MeshNode(
                spec.name,
                medium,
                liveness=scenario.liveness,
                reliable=scenario.reliable,
                topics=spec.topics,
                prioritize=scenario.prioritization,
                on_delivery=partial(self._on_delivery, spec.name),
                on_peer_event=partial(self._on_peer_event, spec.name),
            )
            self.nodes[spec.name] = node
            self.network.add_node(spec.name, partial(self._on_datagram, node))

        for link in scenario.links:
            self.network.connect(link.a, link.b, link, symmetric=link.symmetric)
        if scenario.default_link is not None:
            names = list(self.nodes)
            for a in names:
                for b in names:
                    if a != b and self.network.link(a, b) is None:
                        self.network.connect(a, b, scenario.default_link, symmetric=False)

    # Hooks

    def _on_datagram(self, node: MeshNode, data: bytes, from_address: Address, now: float) -> None:
        node.on_datagram(data, from_address, now)

    def _on_delivery(self, receiver: str, delivery: InboundDelivery) -> None:
        self._arrivals[(delivery.source_name, delivery.topic, receiver)].append(delivery.arrival_time)
        self._delivered[delivery.topic] += len(delivery.payload)
        self.nodes[receiver].router.dispatch(delivery)

    def _on_peer_event(self, observer: str, record: PeerRecord, event: PeerEvent, now: float) -> None:
        state = "offline" if event == PeerEvent.WENT_OFFLINE else "online"
        self._connectivity[(observer, record.name)].append((now, state))

    # Timers

    def _tick(self, node: MeshNode, interval: float, now: float) -> None:
        node.tick(now)
        if now + interval <= self.scenario.duration:
            self.clock.schedule(now + interval, partial(self._tick, node, interval))

    def _generate(self, generator: GeneratorSpec, now: float) -> None:
        node = self.nodes[generator.node]
        payload = self.rng.randbytes(generator.payload_bytes)
        try:
            outcome = node.publish(generator.topic, payload, now, generator.dest)
        except MeshError as exc:
            self._rejected[generator.topic] += 1
            log.debug("publish rejected node=%s topic=%s error=%s", generator.node, generator.topic, exc)
        else:
            self._submitted[generator.topic] += len(payload) * self._copies(node, outcome)

        next_at = now + 1.0 / generator.rate_hz
        stop = self.scenario.duration if generator.stop is None else min(generator.stop, self.scenario.duration)
        if next_at < stop:
            self.clock.schedule(next_at, partial(self._generate, generator))

    @staticmethod
    def _copies(node: MeshNode, outcome) -> int:
        if isinstance(outcome, BroadcastOutcome):
            if outcome.path == BroadcastPath.FAN_OUT:
                return len(outcome.message_ids)
            return len(node.peers.online_ids())
        return 1

    def start(self) -> None:
        """Arm node timers and generators at their phases; idempotent."""
        if self._started:
            return
        self._started = True
        interval = self.scenario.reliable.tick_interval
        period = self.scenario.liveness.heartbeat_period
        for node in self.nodes.values():
            node.start(self.rng.uniform(0.0, period))
            self.clock.schedule(self.rng.uniform(0.0, interval), partial(self._tick, node, interval))
        for generator in self.scenario.generators:
            if generator.start < self.scenario.duration:
                self.clock.schedule(generator.start, partial(self._generate, generator))

    def run(self) -> RunStats:
        self.start()
        self.clock.run(until=self.scenario.duration)
        return self._collect()

    def delivered_bytes(self, topic: str) -> int:
        return self._delivered.get(topic, 0)

    def last_arrival(self, topic: str) -> Optional[float]:
        times = [t[-1] for (_, top, _), t in self._arrivals.items() if top == topic and t]
        return max(times) if times else None

    def _collect(self) -> RunStats:
        stats = self.stats
        topics = sorted({t.name for spec in self.scenario.nodes for t in spec.topics})
        stats.topic_bytes_submitted = {topic: self._submitted.get(topic, 0) for topic in topics}
        stats.topic_bytes_delivered = {topic: self._delivered.get(topic, 0) for topic in topics}
        stats.arrivals = dict(sorted(self._arrivals.items()))
        stats.connectivity = dict(sorted(self._connectivity.items()))
        stats.publish_rejected = dict(sorted(self._rejected.items()))
        stats.events_processed = self.clock.events_processed

        counters: Dict[str, int] = defaultdict(int)
        names = {node.node_id: name for name, node in self.nodes.items()}
        for name, node in self.nodes.items():
            for key, value in node.counters.as_dict().items():
                counters[key] += value
            counters["sched_dropped"] += node.sched.dropped
            counters["medium_send_failures"] += node.medium.send_failures
            for dest_id, peak in node.reliable.max_in_flight.items():
                stats.max_in_flight[(name, names.get(dest_id, f"{dest_id:016x}"))] = peak
        counters["network_sent"] = self.network.counters.sent
        counters["network_delivered"] = self.network.counters.delivered
        counters["network_dropped"] = self.network.counters.dropped
        stats.counters = dict(sorted(counters.items()))
        return stats


def run_scenario(scenario: Scenario | str | Path, seed: Optional[int] = None) -> RunStats:
    if not isinstance(scenario, Scenario):
        scenario = load_scenario(scenario)
    return ScenarioRunner(scenario, seed).run()


def write_run_stats(stats: RunStats, out_dir: str | Path) -> List[Path]:
    """Export RunStats as CSV files; floats use six decimals so reruns are byte-identical."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def _write(name: str, header: List[str], rows) -> None:
        path = out / name
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
        written.append(path)

    arrival_rows = []
    for (source, topic, receiver), times in stats.arrivals.items():
        previous = None
        for at in times:
            interval = "" if previous is None else f"{at - previous:.6f}"
            arrival_rows.append((source, topic, receiver, f"{at:.6f}", interval))
            previous = at
    _write("arrivals.csv", ["source", "topic", "receiver", "arrival_time", "interval"], arrival_rows)

    _write(
        "topic_bytes.csv",
        ["topic", "submitted", "delivered", "fraction"],
        [
            (topic, stats.topic_bytes_submitted.get(topic, 0), delivered, f"{stats.topic_fraction(topic):.6f}")
            for topic, delivered in stats.topic_bytes_delivered.items()
        ],
    )
    _write(
        "connectivity.csv",
        ["observer", "peer", "start", "end", "state"],
        [(o, p, f"{s:.6f}", f"{e:.6f}", state) for o, p, s, e, state in stats.connectivity_intervals()],
    )
    _write("counters.csv", ["name", "value"], list(stats.counters.items()))
    return written


def summary_lines(stats: RunStats, scenario: Scenario) -> List[str]:
    """Line-oriented key=value summary."""
    lines = [
        f"scenario={stats.scenario} seed={stats.seed} duration={stats.duration:.3f} events={stats.events_processed}"
    ]
    for topic, delivered in stats.topic_bytes_delivered.items():
        lines.append(
            f"topic={topic} submitted={stats.topic_bytes_submitted.get(topic, 0)} delivered={delivered} "
            f"fraction={stats.topic_fraction(topic):.4f} rejected={stats.publish_rejected.get(topic, 0)}"
        )
    one_hz = [g for g in scenario.generators if abs(g.rate_hz - 1.0) < 1e-9]
    for generator in one_hz:
        receivers = sorted({rcv for src, top, rcv in stats.arrivals if src == generator.node and top == generator.topic})
        for receiver in receivers:
            mean, std, count = stats.arrival_summary(generator.node, generator.topic, receiver)
            lines.append(
                f"arrivals source={generator.node} topic={generator.topic} receiver={receiver} samples={count} "
                f"mean={mean:.4f} std={std:.4f} reference_mean={REFERENCE_MEAN:.2f} reference_std={REFERENCE_STD:.2f}"
            )
    lines.append(f"heartbeats_received_per_second={stats.heartbeats_received_per_second():.3f}")
    for (src, dst), peak in sorted(stats.max_in_flight.items()):
        lines.append(f"max_in_flight source={src} dest={dst} value={peak}")
    return lines
