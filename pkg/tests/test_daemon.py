import time

import pytest

from src.udp_mesh.config import NodeConfig, TopicConfig
from src.udp_mesh.daemon.runtime import DaemonRuntime, initial_message_id
from src.udp_mesh.errors import PeerOffline, UnknownPeer, UnknownTopic
from src.udp_mesh.medium.medium_udp import UdpMedium


def wait_for(predicate, timeout=10.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(0.05)
    return False


@pytest.fixture
def daemons():
    """Two daemons on loopback that reach each other through static peers."""
    media = {name: UdpMedium(bind_host="127.0.0.1", port=0, broadcast_address=None) for name in ("base", "robot1")}
    media["base"].add_static_peer(media["robot1"].local_address)
    media["robot1"].add_static_peer(media["base"].local_address)
    configs = {
        "base": NodeConfig(name="base", topics=[TopicConfig(name="command", priority=5, mode="broadcast")]),
        "robot1": NodeConfig(name="robot1", topics=[TopicConfig(name="telemetry", priority=10, dest="base")]),
    }
    runtimes = {name: DaemonRuntime(configs[name], medium=media[name]) for name in configs}
    for runtime in runtimes.values():
        runtime.start()
    yield runtimes
    for runtime in runtimes.values():
        runtime.stop()


def peers_online(runtime):
    return [peer.name for peer in runtime.status() if peer.state == "online"]


def test_initial_message_id_fits_32_bits():
    assert 0 <= initial_message_id() < 2**31


def test_daemons_discover_and_exchange(daemons):
    base, robot = daemons["base"], daemons["robot1"]
    assert wait_for(lambda: peers_online(base) == ["robot1"] and peers_online(robot) == ["base"])

    received = []
    base.subscribe("telemetry", received.append)
    message_id = robot.publish("telemetry", b"\x01" * 300)
    print(f"published telemetry message_id={message_id}")

    assert wait_for(lambda: received)
    assert received[0].source_name == "robot1"
    assert received[0].payload == b"\x01" * 300

    stats = robot.stats()
    assert stats["name"] == "robot1"
    assert stats["counters"]["fragments_sent"] >= 1
    assert stats["medium_send_failures"] == 0
    assert stats["sched_dropped"] == 0


def test_broadcast_from_base(daemons):
    base, robot = daemons["base"], daemons["robot1"]
    assert wait_for(lambda: peers_online(base) == ["robot1"])

    received = []
    robot.subscribe("command", received.append)
    base.publish("command", b"halt")
    assert wait_for(lambda: received)
    assert received[0].topic == "command"


def test_bench_over_loopback(daemons):
    base, robot = daemons["base"], daemons["robot1"]
    assert wait_for(lambda: peers_online(robot) == ["base"])

    report = robot.bench("base", 200_000, 1395, timeout=30.0)
    print(report.format())
    assert not report.partial
    assert report.delivered_bytes == 200_000
    assert report.throughput_bps > 0


def test_bench_to_unknown_peer(daemons):
    with pytest.raises(UnknownPeer):
        daemons["robot1"].bench("nobody", 1000, 100)


def test_priority_changes_and_errors(daemons):
    robot = daemons["robot1"]
    updated = robot.set_priority("telemetry", 42)
    assert updated.priority == 42
    assert robot.topics()[0].priority == 42

    with pytest.raises(UnknownTopic):
        robot.set_priority("missing", 1)


def test_lone_daemon_starts_and_stops_twice():
    media = UdpMedium(bind_host="127.0.0.1", port=0, broadcast_address=None)
    runtime = DaemonRuntime(NodeConfig(name="lonely"), medium=media)
    runtime.start()
    assert runtime.status() == []
    with pytest.raises(UnknownTopic):
        runtime.publish("anything", b"")
    assert runtime.stop() == []
    assert runtime.stop() == []


def test_publish_to_offline_peer_is_rejected(daemons):
    base, robot = daemons["base"], daemons["robot1"]
    assert wait_for(lambda: peers_online(robot) == ["base"])

    base.stop()
    # liveness timeout plus one sweep
    assert wait_for(lambda: peers_online(robot) == [], timeout=8.0)
    with pytest.raises(PeerOffline):
        robot.publish("telemetry", b"late")
