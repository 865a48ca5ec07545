import pytest
from pydantic import ValidationError

from src.udp_mesh.errors import NoLink
from src.udp_mesh.simnet.clock import SimClock
from src.udp_mesh.simnet.network import LinkModel, LinkState, LinkWindow, SimNetwork


def make_network(model, seed=0):
    clock = SimClock()
    network = SimNetwork(clock, seed)
    inbox = {"a": [], "b": []}
    for name in inbox:
        network.add_node(name, lambda data, src, t, name=name: inbox[name].append((t, data, src)))
    network.connect("a", "b", model)
    return clock, network, inbox


def test_clock_runs_events_in_time_then_insertion_order():
    clock = SimClock()
    seen = []
    clock.schedule(2.0, lambda t: seen.append(("late", t)))
    clock.schedule(1.0, lambda t: seen.append(("first", t)))
    clock.schedule(1.0, lambda t: seen.append(("second", t)))

    assert clock.run(until=1.5) == 2
    assert clock.now() == 1.5
    assert seen == [("first", 1.0), ("second", 1.0)]
    clock.run()
    assert seen[-1] == ("late", 2.0)
    assert clock.events_processed == 3


def test_clock_rejects_the_past():
    clock = SimClock(start=5.0)
    with pytest.raises(ValueError):
        clock.schedule(4.0, lambda t: None)


def test_arrival_is_serialization_plus_latency():
    """1000-byte datagram on a 1 Mbit/s, 10 ms link arrives at 18 ms"""
    clock, network, inbox = make_network(LinkModel(latency_base=0.010, bandwidth=1_000_000))
    arrival = network.deliver(b"x" * 1000, "a", "b", 0.0)

    assert arrival == pytest.approx(0.018)
    clock.run()
    ((t, data, source),) = inbox["b"]
    assert t == pytest.approx(0.018)
    assert source == ("a", 0)


def test_back_to_back_datagrams_queue_behind_each_other():
    clock, network, _ = make_network(LinkModel(latency_base=0.010, bandwidth=1_000_000))
    first = network.deliver(b"x" * 1000, "a", "b", 0.0)
    second = network.deliver(b"x" * 1000, "a", "b", 0.0)
    assert second - first == pytest.approx(0.008)


def test_jitter_never_reorders():
    clock, network, inbox = make_network(LinkModel(latency_base=0.010, latency_jitter=0.009, bandwidth=1e9), seed=3)
    for i in range(500):
        network.deliver(i.to_bytes(2, "big"), "a", "b", i * 0.0001)
    clock.run()
    order = [int.from_bytes(data, "big") for _, data, _ in inbox["b"]]
    assert order == list(range(500))
    times = [t for t, _, _ in inbox["b"]]
    assert times == sorted(times)


def test_loss_rate_is_roughly_honoured():
    clock, network, inbox = make_network(LinkModel(loss_probability=0.2), seed=9)
    for i in range(5000):
        network.deliver(b"d", "a", "b", i * 0.001)
    clock.run()
    assert 0.17 < network.counters.dropped / 5000 < 0.23
    assert network.counters.delivered == len(inbox["b"])


def test_down_window_drops_everything():
    model = LinkModel(schedule=[LinkWindow(start=1.0, end=2.0)])
    assert model.state_at(1.5) == LinkState.DOWN
    assert model.state_at(2.0) == LinkState.UP

    clock, network, inbox = make_network(model)
    assert network.deliver(b"d", "a", "b", 1.5) is None
    assert network.deliver(b"d", "a", "b", 2.5) is not None


def test_overlapping_windows_rejected():
    with pytest.raises(ValidationError):
        LinkModel(schedule=[LinkWindow(start=0, end=5), LinkWindow(start=4, end=6)])


def test_unlinked_pair_raises_no_link():
    clock = SimClock()
    network = SimNetwork(clock)
    network.add_node("a", lambda *args: None)
    network.add_node("c", lambda *args: None)
    with pytest.raises(NoLink):
        network.deliver(b"d", "a", "c", 0.0)
    assert network.broadcast_deliver(b"d", "a", 0.0) == {}


def test_same_seed_same_trace():
    def trace(seed):
        model = LinkModel(loss_probability=0.3, latency_base=0.01, latency_jitter=0.005)
        clock, network, inbox = make_network(model, seed)
        for i in range(300):
            network.deliver(bytes([i % 256]), "a", "b", i * 0.002)
        clock.run()
        return inbox["b"]

    assert trace(1) == trace(1)
    assert trace(1) != trace(2)


def star_network(seed=0, loss=0.0, partitioned=()):
    clock = SimClock()
    network = SimNetwork(clock, seed)
    inbox = {name: [] for name in ("hub", "p1", "p2", "p3")}
    for name in inbox:
        network.add_node(name, lambda data, src, t, name=name: inbox[name].append(t))
    for peer in ("p1", "p2", "p3"):
        schedule = [LinkWindow(start=0.0, end=100.0)] if peer in partitioned else []
        network.connect("hub", peer, LinkModel(loss_probability=loss, latency_base=0.01, schedule=schedule))
    return clock, network, inbox


def test_broadcast_reaches_every_linked_peer():
    clock, network, inbox = star_network()
    outcomes = network.broadcast_deliver(b"hello", "hub", 0.0)
    clock.run()

    assert sorted(outcomes) == ["p1", "p2", "p3"]
    assert all(arrival is not None for arrival in outcomes.values())
    assert [len(inbox[peer]) for peer in ("p1", "p2", "p3")] == [1, 1, 1]
    assert inbox["hub"] == []


def test_broadcast_skips_a_partitioned_peer():
    clock, network, inbox = star_network(partitioned=("p2",))
    outcomes = network.broadcast_deliver(b"hello", "hub", 1.0)
    clock.run()

    assert outcomes["p2"] is None
    assert sum(len(times) for times in inbox.values()) == 2
    assert inbox["p2"] == []


def test_seeded_broadcast_outcomes_repeat():
    def outcomes(seed):
        clock, network, _ = star_network(seed=seed, loss=0.4)
        return [network.broadcast_deliver(b"x", "hub", i * 0.01) for i in range(50)]

    assert outcomes(3) == outcomes(3)
    assert outcomes(3) != outcomes(4)
