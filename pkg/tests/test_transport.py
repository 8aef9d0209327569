import pytest

from reshard.errors import SimulationError
from reshard.models import Topology
from reshard.transport import Compute, Message, Post, Transport, barrier, recv, send

TOPO = Topology(num_nodes=2, ranks_per_node=2, intra_node_bw=1e9, inter_node_bw=1e8, per_message_latency=1e-3)


def test_send_recv_completes_at_transfer_time():
    got = {}

    def sender():
        yield send(Message(0, 1, ("t",), 1000, payload="hello"))

    def receiver():
        got.update((yield recv(0, 1, ("t",))))

    result = Transport(TOPO).run({0: sender(), 1: receiver()})
    assert not result.deadlocked
    assert got == {("t",): "hello"}
    assert result.clocks[0] == result.clocks[1] == pytest.approx(1e-3 + 1000 / 1e9)
    assert result.messages == 1 and result.bytes_moved == 1000


def test_inter_node_uses_slower_tier():
    def sender():
        yield send(Message(0, 2, ("t",), 1000))

    def receiver():
        yield recv(0, 2, ("t",))

    result = Transport(TOPO).run({0: sender(), 2: receiver()})
    assert result.sim_time == pytest.approx(1e-3 + 1000 / 1e8)


def test_transfer_starts_when_both_sides_posted():
    def sender():
        yield Compute(0.5)
        yield send(Message(0, 1, ("t",), 0))

    def receiver():
        yield recv(0, 1, ("t",))

    result = Transport(TOPO).run({0: sender(), 1: receiver()})
    assert result.clocks[1] == pytest.approx(0.5 + 1e-3)


def test_outbound_transfers_serialize_on_the_sender():
    def sender():
        yield Post(sends=(Message(0, 1, ("a",), 1000), Message(0, 2, ("b",), 1000)))

    def receiver(rank):
        yield recv(0, rank, ("a",) if rank == 1 else ("b",))

    serial = Transport(TOPO).run({0: sender(), 1: receiver(1), 2: receiver(2)})
    parallel = Transport(TOPO, serialize_outbound=False).run({0: sender(), 1: receiver(1), 2: receiver(2)})
    assert serial.sim_time > parallel.sim_time


def test_barrier_releases_at_the_latest_arrival():
    def program(rank):
        yield Compute(0.1 * (rank + 1))
        yield barrier(("end",), (0, 1, 2))

    result = Transport(TOPO).run({r: program(r) for r in range(3)})
    assert all(clock == pytest.approx(0.3) for clock in result.clocks.values())
    assert result.collectives == 0


def test_two_blocking_sends_deadlock():
    def program(rank):
        peer = 1 - rank
        yield send(Message(rank, peer, ("x",), 8))
        yield recv(peer, rank, ("x",))

    result = Transport(TOPO).run({0: program(0), 1: program(1)})
    assert result.deadlocked
    assert set(result.witness) == {0, 1}


def test_duplicate_send_is_rejected():
    def program():
        yield Post(sends=(Message(0, 1, ("x",), 8), Message(0, 1, ("x",), 8)))

    def idle():
        return
        yield

    with pytest.raises(SimulationError, match="duplicate"):
        Transport(TOPO).run({0: program(), 1: idle()})
