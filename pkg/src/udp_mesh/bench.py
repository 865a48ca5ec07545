"""
Payload throughput bench.

`run_sim_bench` drives two nodes over simnet; the daemon runs the same
measurement over real sockets (see `DaemonRuntime.bench`). Both report
payload bits per second, excluding every header byte.
"""
import logging
import random
from dataclasses import asdict, dataclass
from typing import List, Optional

from .config import LivenessConfig, ReliableConfig
from .errors import NotFound
from .simnet.network import LinkModel
from .simnet.runner import ScenarioRunner
from .simnet.scenario import NodeSpec, Scenario
from .wire import fragment_capacity

log = logging.getLogger(__name__)

BENCH_TOPIC = "bench"
BENCH_PRIORITY = 255
DEFAULT_PAYLOAD_SIZE = fragment_capacity(0, len(BENCH_TOPIC.encode()))

SENDER = "bench-tx"
RECEIVER = "bench-rx"


@dataclass(frozen=True)
class BenchReport:
    dest: str
    total_bytes: int
    payload_size: int
    delivered_bytes: int
    duration: float
    retransmits: int
    partial: bool = False
    note: str = ""

    @property
    def throughput_bps(self) -> float:
        if self.duration <= 0:
            return 0.0
        return self.delivered_bytes * 8 / self.duration

    def as_dict(self) -> dict:
        return {**asdict(self), "throughput_bps": self.throughput_bps}

    def format(self) -> str:
        fields = [
            f"dest={self.dest}",
            f"total_bytes={self.total_bytes}",
            f"payload_size={self.payload_size}",
            f"delivered_bytes={self.delivered_bytes}",
            f"duration={self.duration:.6f}",
            f"throughput_bps={self.throughput_bps:.0f}",
            f"retransmits={self.retransmits}",
            f"partial={str(self.partial).lower()}",
        ]
        if self.note:
            fields.append(f"note={self.note}")
        return " ".join(fields)


def split_payloads(total_bytes: int, payload_size: int) -> List[int]:
    """Message sizes covering `total_bytes`; the last one may be short."""
    if payload_size <= 0:
        raise ValueError("payload_size must be positive")
    full, rest = divmod(total_bytes, payload_size)
    return [payload_size] * full + ([rest] if rest else [])


def run_sim_bench(
    total_bytes: int = 1_000_000,
    payload_size: Optional[int] = None,
    one_way_latency: float = 0.025,
    bandwidth: float = 1e9,
    loss: float = 0.0,
    window: int = 3,
    seed: int = 0,
    time_limit: float = 3600.0,
) -> BenchReport:
    """
    Send `total_bytes` from one simulated node to another over a single
    link and time it in virtual seconds, from first submit to last delivery.
    """
    payload_size = payload_size or DEFAULT_PAYLOAD_SIZE
    if total_bytes <= 0:
        return BenchReport(RECEIVER, 0, payload_size, 0, 0.0, 0, note="no_payload")

    scenario = Scenario(
        name="bench",
        seed=seed,
        duration=time_limit,
        nodes=[NodeSpec(name=SENDER), NodeSpec(name=RECEIVER)],
        default_link=LinkModel(loss_probability=loss, latency_base=one_way_latency, bandwidth=bandwidth),
        liveness=LivenessConfig(),
        reliable=ReliableConfig(window=window),
    )
    runner = ScenarioRunner(scenario)
    sender = runner.nodes[SENDER]
    runner.start()

    step = scenario.reliable.tick_interval
    discovery_deadline = 10 * scenario.liveness.heartbeat_period
    while not _online(runner, SENDER, RECEIVER) and runner.clock.now() < discovery_deadline:
        runner.clock.run(until=runner.clock.now() + step)
    if not _online(runner, SENDER, RECEIVER):
        return BenchReport(RECEIVER, total_bytes, payload_size, 0, 0.0, 0, partial=True, note="peer_offline")

    rng = random.Random(seed)
    started = runner.clock.now()
    for size in split_payloads(total_bytes, payload_size):
        sender.reliable.submit(RECEIVER, BENCH_TOPIC, rng.randbytes(size), BENCH_PRIORITY, started)
    sender.pump(started)

    note = ""
    while runner.delivered_bytes(BENCH_TOPIC) < total_bytes:
        if sender.counters.transfers_aborted:
            note = "peer_offline"
            break
        if runner.clock.now() >= time_limit:
            note = "time_limit"
            break
        runner.clock.run(until=min(runner.clock.now() + step, time_limit))

    finished = runner.last_arrival(BENCH_TOPIC) or started
    report = BenchReport(
        dest=RECEIVER,
        total_bytes=total_bytes,
        payload_size=payload_size,
        delivered_bytes=runner.delivered_bytes(BENCH_TOPIC),
        duration=finished - started,
        retransmits=sender.counters.retransmits,
        partial=bool(note),
        note=note,
    )
    log.debug("bench finished %s", report.format())
    return report


def _online(runner: ScenarioRunner, observer: str, peer: str) -> bool:
    node = runner.nodes[observer]
    try:
        node_id, _ = node.peers.resolve(peer)
    except NotFound:
        return False
    return node.peers.is_online(node_id)
