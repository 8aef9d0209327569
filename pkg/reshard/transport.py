"""
Blocking message transport for simulated ranks.

Each rank runs a generator program that yields instructions:
  Compute(duration)             advance the rank's clock
  Post(sends, recvs)            post a batch; block until every op is matched
                                and complete; resumes with {tag: payload}
  Rendezvous(key, participants) block until all participants arrive; resumes
                                with {rank: contribution}; barriers and
                                collectives are rendezvous

Sends have rendezvous semantics: a send completes only when the receiver has
posted the matching recv. Matching is by (src, dst, tag).

The driver is single-threaded and deterministic: ranks advance in ascending
order, matched transfers are timed in (ready time, key) order. A transfer
starts at max(both post times, sender NIC free) and takes
latency + bytes / bw(tier). When no rank can make progress while some are
unfinished, the wait-for graph is searched for a cycle (networkx) and the run
ends with a deadlock witness.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Dict, Generator, List, Mapping, Optional, Set, Tuple

import networkx as nx

from .errors import SimulationError
from .models import Topology

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Message:
    src: int
    dst: int
    tag: Tuple
    nbytes: int
    payload: Any = None


@dataclass(frozen=True)
class Expect:
    src: int
    dst: int
    tag: Tuple


@dataclass(frozen=True)
class Post:
    sends: Tuple[Message, ...] = ()
    recvs: Tuple[Expect, ...] = ()


@dataclass(frozen=True)
class Compute:
    duration: float


@dataclass(frozen=True)
class Rendezvous:
    key: Tuple
    participants: Tuple[int, ...]
    duration: float = 0.0
    contribution: Any = None
    nbytes: int = 0


def send(msg: Message) -> Post:
    return Post(sends=(msg,))


def recv(src: int, dst: int, tag: Tuple) -> Post:
    return Post(recvs=(Expect(src, dst, tag),))


def barrier(key: Tuple, participants) -> Rendezvous:
    return Rendezvous(key=("barrier",) + tuple(key), participants=tuple(participants))


Program = Generator[Any, Any, None]


@dataclass
class TraceEvent:
    start: float
    end: float
    src: int
    dst: int
    nbytes: int
    tag: Tuple


@dataclass
class TransportResult:
    clocks: Dict[int, float]
    finished: Set[int]
    deadlocked: bool = False
    witness: Tuple[int, ...] = ()
    messages: int = 0
    collectives: int = 0
    bytes_moved: int = 0
    trace: List[TraceEvent] = field(default_factory=list)

    @property
    def sim_time(self) -> float:
        return max(self.clocks.values(), default=0.0)


class DeadlockDetector:
    """Wait-for graph over blocked ranks."""

    def __init__(self):
        self._wait_for_graph = nx.DiGraph()

    def wait_for(self, waiting: int, waited_on: int) -> None:
        self._wait_for_graph.add_edge(waiting, waited_on)

    def find_deadlock_cycle(self) -> Optional[Tuple[int, ...]]:
        try:
            cycle = nx.find_cycle(self._wait_for_graph, orientation="original")
        except nx.NetworkXNoCycle:
            return None
        return tuple(edge[0] for edge in cycle)


class Transport:
    def __init__(self, topology: Topology, serialize_outbound: bool = True, trace: bool = False):
        self.topology = topology
        self.serialize_outbound = serialize_outbound
        self.trace = trace

    def run(self, programs: Mapping[int, Program]) -> TransportResult:
        ranks = sorted(programs)
        result = TransportResult(clocks={r: 0.0 for r in ranks}, finished=set())
        resume: Dict[int, Any] = {}
        waiting: Dict[int, Any] = {}
        sends: Dict[Tuple, Tuple[Message, float]] = {}
        recvs: Dict[Tuple, float] = {}
        outstanding: Dict[int, Set[Tuple]] = defaultdict(set)
        completion: Dict[int, float] = {}
        delivered: Dict[int, Dict[Tuple, Any]] = defaultdict(dict)
        arrivals: Dict[Tuple, Dict[int, Tuple[float, Any]]] = defaultdict(dict)
        rendezvous: Dict[Tuple, Rendezvous] = {}
        nic_free: Dict[int, float] = defaultdict(float)

        runnable = list(ranks)
        while True:
            for rank in runnable:
                self._advance(rank, programs[rank], resume, waiting, result, sends, recvs,
                              outstanding, completion, arrivals, rendezvous)
            runnable = []

            matched = sorted(set(sends) & set(recvs), key=lambda k: (max(sends[k][1], recvs[k]), k))
            for key in matched:
                msg, sent_at = sends.pop(key)
                posted_at = recvs.pop(key)
                start = max(sent_at, posted_at)
                if self.serialize_outbound:
                    start = max(start, nic_free[msg.src])
                end = start + self.topology.transfer_time(msg.src, msg.dst, msg.nbytes)
                if self.serialize_outbound:
                    nic_free[msg.src] = end
                for rank, op in ((msg.src, ("send",) + key), (msg.dst, ("recv",) + key)):
                    outstanding[rank].discard(op)
                    completion[rank] = max(completion.get(rank, 0.0), end)
                delivered[msg.dst][msg.tag] = msg.payload
                result.messages += 1
                result.bytes_moved += msg.nbytes
                if self.trace:
                    result.trace.append(TraceEvent(start, end, msg.src, msg.dst, msg.nbytes, msg.tag))

            for rank in sorted(waiting):
                if isinstance(waiting[rank], Post) and not outstanding[rank]:
                    del waiting[rank]
                    result.clocks[rank] = max(result.clocks[rank], completion.pop(rank, 0.0))
                    resume[rank] = delivered.pop(rank, {})
                    runnable.append(rank)

            for key in sorted(arrivals, key=repr):
                spec = rendezvous[key]
                arrived = arrivals[key]
                if set(arrived) != set(spec.participants):
                    continue
                end = max(t for t, _ in arrived.values()) + spec.duration
                contributions = {r: c for r, (_, c) in sorted(arrived.items())}
                for rank in spec.participants:
                    del waiting[rank]
                    result.clocks[rank] = end
                    resume[rank] = contributions
                    runnable.append(rank)
                if spec.key[0] != "barrier":
                    result.collectives += 1
                    result.bytes_moved += spec.nbytes
                    if self.trace:
                        result.trace.append(TraceEvent(end - spec.duration, end, spec.participants[0], -1,
                                                       spec.nbytes, spec.key))
                del arrivals[key]
                del rendezvous[key]

            runnable = sorted(set(runnable))
            if runnable:
                continue
            if len(result.finished) == len(ranks):
                return result
            return self._deadlock(result, programs, waiting, outstanding, arrivals, rendezvous)

    def _advance(self, rank, program, resume, waiting, result, sends, recvs,
                 outstanding, completion, arrivals, rendezvous) -> None:
        value = resume.pop(rank, None)
        while True:
            try:
                instr = program.send(value)
            except StopIteration:
                result.finished.add(rank)
                return
            value = None
            now = result.clocks[rank]
            if isinstance(instr, Compute):
                result.clocks[rank] = now + instr.duration
            elif isinstance(instr, Post):
                if not instr.sends and not instr.recvs:
                    value = {}
                    continue
                for msg in instr.sends:
                    key = (msg.src, msg.dst, msg.tag)
                    if msg.src != rank or key in sends:
                        raise SimulationError(f"rank {rank} posted an invalid or duplicate send {key}")
                    sends[key] = (msg, now)
                    outstanding[rank].add(("send",) + key)
                for exp in instr.recvs:
                    key = (exp.src, exp.dst, exp.tag)
                    if exp.dst != rank or key in recvs:
                        raise SimulationError(f"rank {rank} posted an invalid or duplicate recv {key}")
                    recvs[key] = now
                    outstanding[rank].add(("recv",) + key)
                waiting[rank] = instr
                return
            elif isinstance(instr, Rendezvous):
                if rank not in instr.participants:
                    raise SimulationError(f"rank {rank} joined rendezvous {instr.key} it is not part of")
                rendezvous.setdefault(instr.key, instr)
                arrivals[instr.key][rank] = (now, instr.contribution)
                waiting[rank] = instr
                return
            else:
                raise SimulationError(f"rank {rank} yielded unknown instruction {instr!r}")

    def _deadlock(self, result, programs, waiting, outstanding, arrivals, rendezvous) -> TransportResult:
        detector = DeadlockDetector()
        for rank in sorted(waiting):
            instr = waiting[rank]
            if isinstance(instr, Post):
                for op in sorted(outstanding[rank]):
                    _, src, dst, _ = op
                    detector.wait_for(rank, dst if src == rank else src)
            else:
                for peer in rendezvous[instr.key].participants:
                    if peer not in arrivals[instr.key]:
                        detector.wait_for(rank, peer)
        cycle = detector.find_deadlock_cycle()
        result.deadlocked = True
        result.witness = cycle if cycle is not None else tuple(sorted(waiting))
        for rank in sorted(waiting):
            programs[rank].close()
        logger.warning("Transport deadlocked; witness %s", list(result.witness))
        return result
