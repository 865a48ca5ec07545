import dataclasses
import random

import pytest

from src.udp_mesh.config import LivenessConfig, ReliableConfig
from src.udp_mesh.errors import PeerOffline, UnknownPeer, UnknownTransfer
from src.udp_mesh.peers import PeerTable, make_heartbeat
from src.udp_mesh.reliable import (
    AbortTransfer,
    FragmentRejected,
    FragmentStored,
    MessageComplete,
    PurgeReassembly,
    ReliableTransport,
    Retransmit,
    TransferStatus,
)
from src.udp_mesh.sched import Scheduler
from src.udp_mesh.wire import PAYLOAD_BUDGET, plan_fragments, node_id_for

ROBOT = node_id_for("robot1")
BASE = node_id_for("base")
ADDRESS = ("10.0.0.1", 4950)


def make_transport(self_name, peer_name, config=None):
    peers = PeerTable(LivenessConfig(), node_id_for(self_name))
    peers.observe(make_heartbeat(node_id_for(peer_name), peer_name, 0.0), ADDRESS, 0.0)
    sched = Scheduler()
    transport = ReliableTransport(node_id_for(self_name), peers, sched, config or ReliableConfig())
    return transport, peers, sched


def transmit_all(transport, peers, sched, now):
    sent = []
    while True:
        frag = sched.dequeue_eligible(transport.window_state(), peers.is_online)
        if frag is None:
            return sent
        env = transport.take_for_transmit(frag, now)
        if env is not None:
            sent.append(env)


def test_submit_plans_fragments_and_counts_ids():
    transport, _, sched = make_transport("robot1", "base")
    first = transport.submit("base", "", b"a" * 4200, 10)
    second = transport.submit("base", "", b"b", 10)

    assert second == first + 1
    (transfer, _) = transport.pending_transfers(BASE)
    assert transfer.frag_count == plan_fragments(4200, 0).frag_count == 3
    assert len(sched) == 4


def test_submit_to_offline_or_unknown_peer():
    transport, peers, sched = make_transport("robot1", "base")
    peers.mark_offline(BASE)
    with pytest.raises(PeerOffline):
        transport.submit("base", "t", b"x", 10)
    with pytest.raises(UnknownPeer):
        transport.submit("nobody", "t", b"x", 10)
    assert len(sched) == 0
    assert transport.pending_transfers() == []


def test_window_caps_in_flight():
    transport, peers, sched = make_transport("robot1", "base")
    transport.submit("base", "map", b"m" * (PAYLOAD_BUDGET * 9), 200)

    sent = transmit_all(transport, peers, sched, 0.0)
    assert [env.frag_index for env in sent] == [0, 1, 2]
    assert transport.in_flight(BASE) == 3

    receiver, _, _ = make_transport("base", "robot1")
    ack, _ = receiver.on_data(sent[1], 0.01)
    assert transport.on_ack(ack, 0.02).status == TransferStatus.PROGRESS
    assert transport.in_flight(BASE) == 2

    more = transmit_all(transport, peers, sched, 0.02)
    assert [env.frag_index for env in more] == [3]
    assert transport.max_in_flight[BASE] == 3


def test_complete_duplicate_and_stale_acks():
    transport, peers, sched = make_transport("robot1", "base")
    receiver, _, _ = make_transport("base", "robot1")
    message_id = transport.submit("base", "cmd", b"go", 5)
    (env,) = transmit_all(transport, peers, sched, 0.0)
    ack, delivery = receiver.on_data(env, 0.01)

    assert isinstance(delivery, MessageComplete)
    event = transport.on_ack(ack, 0.02)
    assert event.status == TransferStatus.COMPLETE
    assert event.message_id == message_id
    assert transport.in_flight(BASE) == 0

    with pytest.raises(UnknownTransfer):
        transport.on_ack(ack, 0.03)
    assert transport.stale_acks == 1


def test_duplicate_ack_is_idempotent():
    transport, peers, sched = make_transport("robot1", "base")
    receiver, _, _ = make_transport("base", "robot1")
    transport.submit("base", "map", b"m" * (PAYLOAD_BUDGET * 3), 200)
    sent = transmit_all(transport, peers, sched, 0.0)
    ack, _ = receiver.on_data(sent[0], 0.01)

    transport.on_ack(ack, 0.02)
    transport.on_ack(ack, 0.03)
    (transfer,) = transport.pending_transfers(BASE)
    assert transfer.acked == {0}
    assert transport.in_flight(BASE) == 2


def test_out_of_order_reassembly_and_duplicates():
    transport, peers, sched = make_transport("robot1", "base")
    receiver, _, _ = make_transport("base", "robot1")
    payload = bytes(range(256)) * 12
    transport.submit("base", "map", payload, 200)
    sent = transmit_all(transport, peers, sched, 0.0)
    assert len(sent) == 3

    events = [receiver.on_data(sent[i], 0.01)[1] for i in (2, 0)]
    assert all(isinstance(e, FragmentStored) and not e.duplicate for e in events)
    assert receiver.on_data(sent[0], 0.01)[1].duplicate

    ack, complete = receiver.on_data(sent[1], 0.02)
    assert isinstance(complete, MessageComplete)
    assert complete.payload == payload
    assert complete.topic == "map"
    assert ack.frag_index == 1

    # late duplicate after completion is re-acked, never re-delivered
    ack, again = receiver.on_data(sent[2], 0.03)
    assert isinstance(again, FragmentStored) and again.duplicate
    assert ack.frag_index == 2


def test_expired_fragment_is_requeued_with_backoff():
    transport, peers, sched = make_transport("robot1", "base")
    transport.submit("base", "t", b"x", 10)
    transmit_all(transport, peers, sched, 0.0)

    assert transport.tick(0.1) == []
    actions = transport.tick(0.2)
    assert [type(a) for a in actions] == [Retransmit]
    assert transport.in_flight(BASE) == 0

    (env,) = transmit_all(transport, peers, sched, 0.2)
    (transfer,) = transport.pending_transfers(BASE)
    assert transfer.in_flight[0] == pytest.approx(0.6)
    assert transfer.retransmits == 1


def test_backoff_is_capped():
    config = ReliableConfig(retransmit_initial=0.2, retransmit_max=0.5)
    transport, peers, sched = make_transport("robot1", "base", config)
    transport.submit("base", "t", b"x", 10)
    now = 0.0
    for _ in range(5):
        transmit_all(transport, peers, sched, now)
        (transfer,) = transport.pending_transfers(BASE)
        now = transfer.in_flight[0]
        transport.tick(now)
    assert transfer.rto[0] == 0.5


def test_idle_reassembly_is_purged_and_source_marked_offline():
    transport, peers, sched = make_transport("robot1", "base")
    receiver, receiver_peers, _ = make_transport("base", "robot1")
    transport.submit("base", "map", b"m" * (PAYLOAD_BUDGET * 3), 200)
    sent = transmit_all(transport, peers, sched, 0.0)
    receiver.on_data(sent[0], 0.0)

    assert receiver.tick(10.0) == []
    (action,) = receiver.tick(10.1)
    assert isinstance(action, PurgeReassembly)
    assert action.marked_offline
    assert not receiver_peers.is_online(ROBOT)
    assert receiver.reassembly_buffers() == []


def test_transfers_abort_when_peer_goes_offline():
    transport, peers, sched = make_transport("robot1", "base")
    transport.submit("base", "a", b"x" * 5000, 10)
    transport.submit("base", "b", b"y", 10)
    transmit_all(transport, peers, sched, 0.0)

    peers.mark_offline(BASE)
    actions = [a for a in transport.tick(0.05) if isinstance(a, AbortTransfer)]
    assert len(actions) == 2
    assert {a.event.status for a in actions} == {TransferStatus.ABORTED}
    assert transport.pending_transfers() == []
    assert transport.in_flight(BASE) == 0
    assert len(sched) == 0


@pytest.mark.parametrize("seed", range(10))
def test_lossy_exchange_delivers_identical_bytes_once(seed):
    """Random 30% loss in both directions; payload arrives intact exactly once"""
    rng = random.Random(seed)
    transport, peers, sched = make_transport("robot1", "base")
    receiver, _, _ = make_transport("base", "robot1")
    payload = rng.randbytes(rng.randint(1, 40_000))
    transport.submit("base", "map", payload, 200)

    completes = []
    now = 0.0
    while transport.pending_transfers():
        for env in transmit_all(transport, peers, sched, now):
            assert transport.in_flight(BASE) <= 3
            if rng.random() < 0.3:
                continue
            ack, delivery = receiver.on_data(env, now)
            if isinstance(delivery, MessageComplete):
                completes.append(delivery)
            if rng.random() < 0.3:
                continue
            transport.on_ack(ack, now)
        now += 0.05
        transport.tick(now)
        assert now < 10_000

    assert len(completes) == 1
    assert completes[0].payload == payload


def test_fragment_with_conflicting_count_is_neither_stored_nor_acked():
    transport, peers, sched = make_transport("robot1", "base")
    receiver, _, _ = make_transport("base", "robot1")
    transport.submit("base", "map", b"m" * (PAYLOAD_BUDGET * 3), 200)
    first, second, _ = transmit_all(transport, peers, sched, 0.0)
    receiver.on_data(first, 0.0)

    conflicting = dataclasses.replace(second, frag_count=second.frag_count + 1)
    ack, event = receiver.on_data(conflicting, 0.01)
    assert ack is None
    assert isinstance(event, FragmentRejected)
    (buffer,) = receiver.reassembly_buffers()
    assert sorted(buffer.received) == [0]

    ack, event = receiver.on_data(second, 0.02)
    assert ack.frag_index == 1
    assert not event.duplicate


def test_completed_ids_expire_after_retention():
    receiver, _, _ = make_transport("base", "robot1")
    transport, peers, sched = make_transport("robot1", "base")
    for _ in range(3):
        transport.submit("base", "cmd", b"go", 5)
    sent = transmit_all(transport, peers, sched, 0.0)
    for offset, env in enumerate(sent):
        receiver.on_data(env, float(offset))

    # completed at t=0, 1, 2; only the last is inside the 60 s retention
    receiver.tick(61.5)
    assert isinstance(receiver.on_data(sent[0], 61.5)[1], MessageComplete)
    assert receiver.on_data(sent[2], 61.5)[1].duplicate
