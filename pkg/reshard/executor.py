"""
Executes a TransitionSchedule on a SimCluster.

Every device runs the same program skeleton:
  1. free the obsolete-buffer list (dropped gradients, unselected src-only state)
  2. collectives phase, one collective at a time; departing devices drop
     scalars once it ends
  3. each stage, then a global barrier and the stage's eager releases

Modes differ only in how a stage's traffic is issued:
  naive         one blocking message per fragment, lower device sends first,
                collectives decomposed into their fragments
  buffer-sync   one packed buffer per (peer, step), steps in order, half-duplex
                within a pair (lower device sends first), a barrier after each
                collective
  buffer-async  every buffer of the stage posted in one batch

A buffer with a single contiguous fragment is sent without packing.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from .cluster import RankState, SimCluster, scalar_indices
from .errors import ConfigError, SimulationError
from .planners import SliceTransfer, StateKind
from .regions import RegionSet
from .scheduler import BufferLayout, CommKind, CommOp, Stage, TransitionSchedule, is_contiguous, xor_schedule
from .transport import Compute, Expect, Message, Post, Rendezvous, Transport, barrier, recv, send

logger = logging.getLogger(__name__)

MODES = ("naive", "buffer-sync", "buffer-async")


@dataclass
class ExecReport:
    mode: str
    sim_time: float
    peak_bytes: Dict[int, int]
    messages: int
    collectives: int
    bytes_moved: int
    stages: int
    deadlocked: bool = False
    witness: Tuple[int, ...] = ()
    trace: List[str] = field(default_factory=list)

    @property
    def max_peak(self) -> int:
        return max(self.peak_bytes.values(), default=0)


class _Executor:
    def __init__(self, cluster: SimCluster, schedule: TransitionSchedule, mode: str):
        self.cluster = cluster
        self.schedule = schedule
        self.mode = mode
        self.vps = schedule.vps
        self.topology = cluster.topology
        self.everyone = tuple(range(schedule.num_devices))
        self._indices: Dict[RegionSet, np.ndarray] = {}
        self._contiguous: Dict[RegionSet, bool] = {}

    def indices(self, t: SliceTransfer) -> np.ndarray:
        if t.state_kind == StateKind.SCALAR:
            return scalar_indices()
        if t.region not in self._indices:
            self._indices[t.region] = self.vps.flat_indices(t.region)
        return self._indices[t.region]

    def contiguous(self, t: SliceTransfer) -> bool:
        if t.state_kind == StateKind.SCALAR:
            return True
        if t.region not in self._contiguous:
            self._contiguous[t.region] = is_contiguous(self.vps, t.region)
        return self._contiguous[t.region]

    def take(self, state: RankState, t: SliceTransfer) -> np.ndarray:
        return state.store.take(t.state_kind, self.indices(t))

    def put(self, state: RankState, t: SliceTransfer, values: np.ndarray) -> None:
        state.store.put(t.state_kind, self.indices(t), values)

    def pack(self, state: RankState, layout: BufferLayout) -> np.ndarray:
        parts = [self.take(state, slot.transfer) for slot in layout.slots]
        return np.concatenate(parts) if parts else np.empty(0, dtype=np.uint64)

    def unpack(self, state: RankState, layout: BufferLayout, buffer: np.ndarray) -> None:
        for slot in layout.slots:
            self.put(state, slot.transfer, buffer[slot.offset:slot.offset + slot.transfer.numel])

    def release(self, state: RankState, regions: Dict[StateKind, RegionSet]) -> None:
        for kind, region in regions.items():
            state.store.drop(kind, self.vps.flat_indices(region))

    # programs

    def program(self, device: int):
        state = self.cluster.ranks[device]
        self.release(state, self.schedule.free_list.get(device, {}))

        for index, op in enumerate(self.schedule.collectives):
            if self.mode == "naive":
                yield from self._naive_collective(state, index, op)
            else:
                yield from self._collective(state, index, op)
                if self.mode == "buffer-sync":
                    yield barrier(("collective", index), self.everyone)
        yield barrier(("collectives",), self.everyone)
        self.release(state, self.schedule.releases[0].get(device, {}))
        if device in self.schedule.departing:
            state.store.clear(StateKind.SCALAR)

        for stage in self.schedule.stages:
            if self.mode == "naive":
                yield from self._naive_stage(state, stage)
            else:
                yield from self._buffered_stage(state, stage)
            yield barrier(("stage", stage.index), self.everyone)
            self.release(state, self.schedule.releases[stage.index].get(device, {}))
        state.status = "done"

    def _collective(self, state: RankState, index: int, op: CommOp):
        device = state.device
        if device not in op.participants:
            return
        label = f"collective {index} ({op.kind.value} {op.tensor_id})"
        nbytes = op.rank_bytes(device)
        state.ledger.alloc(nbytes, label)
        outgoing = [(i, t) for i, t in enumerate(op.payload) if t.src_device == device]
        if op.kind == CommKind.BROADCAST:
            outgoing = outgoing[:1]
        pack_bytes = sum(t.bytes for _, t in outgoing if not self.contiguous(t))
        if pack_bytes:
            yield Compute(self.topology.pack_time(pack_bytes))
        contribution = {i: self.take(state, t) for i, t in outgoing}
        duration = self.topology.collective_time(op.kind.value, op.root, op.participants, op.bytes)
        gathered = yield Rendezvous(
            key=("collective", index), participants=op.participants, duration=duration,
            contribution=contribution, nbytes=op.bytes,
        )
        incoming = [(i, t) for i, t in enumerate(op.payload) if t.dst_device == device]
        for i, t in incoming:
            source = gathered[t.src_device]
            values = source[i] if i in source else next(iter(source.values()))
            self.put(state, t, values)
        unpack_bytes = sum(t.bytes for _, t in incoming if not self.contiguous(t))
        if unpack_bytes:
            yield Compute(self.topology.pack_time(unpack_bytes))
        state.ledger.free(nbytes)

    def _fragment(self, state: RankState, t: SliceTransfer, tag: Tuple, label: str):
        state.ledger.alloc(t.bytes, label)
        copy = 0.0 if self.contiguous(t) else self.topology.pack_time(t.bytes)
        if t.src_device == state.device:
            if copy:
                yield Compute(copy)
            yield send(Message(t.src_device, t.dst_device, tag, t.bytes, self.take(state, t)))
        else:
            delivered = yield recv(t.src_device, t.dst_device, tag)
            if copy:
                yield Compute(copy)
            self.put(state, t, delivered[tag])
        state.ledger.free(t.bytes)

    def _naive_collective(self, state: RankState, index: int, op: CommOp):
        label = f"collective {index} ({op.kind.value} {op.tensor_id})"
        for seq, t in enumerate(op.payload):
            if state.device in (t.src_device, t.dst_device):
                yield from self._fragment(state, t, (0, index, seq), label)

    def _naive_stage(self, state: RankState, stage: Stage):
        label = f"stage {stage.index}"
        device = state.device
        for step, peer in xor_schedule(stage, self.schedule.num_devices, device):
            low = min(device, peer)
            pair = [t for t in stage.transfers if {t.src_device, t.dst_device} == {device, peer}]
            pair.sort(key=lambda t: (t.src_device != low, t.layout_key()))
            for seq, t in enumerate(pair):
                yield from self._fragment(state, t, (stage.index, step, seq), label)

    def _buffered_stage(self, state: RankState, stage: Stage):
        label = f"stage {stage.index}"
        device = state.device
        outbound = [l for l in stage.layouts if l.src_device == device]
        inbound = [l for l in stage.layouts if l.dst_device == device]
        nbytes = sum(l.nbytes for l in outbound + inbound)
        state.ledger.alloc(nbytes, label)

        pack_bytes = sum(l.nbytes for l in outbound if not l.zero_copy)
        if pack_bytes:
            yield Compute(self.topology.pack_time(pack_bytes))
        messages = {
            (l.step, l.dst_device): Message(device, l.dst_device, (stage.index, l.step, 0), l.nbytes, self.pack(state, l))
            for l in outbound
        }
        received: Dict[Tuple, np.ndarray] = {}
        if self.mode == "buffer-async":
            received = yield Post(
                sends=tuple(messages[k] for k in sorted(messages)),
                recvs=tuple(Expect(l.src_device, device, (stage.index, l.step, 0)) for l in inbound),
            )
        else:
            for step, peer in xor_schedule(stage, self.schedule.num_devices, device):
                ops = []
                if (step, peer) in messages:
                    ops.append(("send", send(messages[(step, peer)])))
                if stage.layout(step, peer, device) is not None:
                    ops.append(("recv", recv(peer, device, (stage.index, step, 0))))
                if device > peer:
                    ops.reverse()
                for kind, post in ops:
                    got = yield post
                    if kind == "recv":
                        received.update(got)

        unpack_bytes = sum(l.nbytes for l in inbound if not l.zero_copy)
        if unpack_bytes:
            yield Compute(self.topology.pack_time(unpack_bytes))
        for l in inbound:
            self.unpack(state, l, received[(stage.index, l.step, 0)])
        state.ledger.free(nbytes)


def _report(mode: str, cluster: SimCluster, schedule: TransitionSchedule, result) -> ExecReport:
    trace = [
        f"t={e.start:.9f} stage={e.tag[0]} step={e.tag[1]} src={e.src} dst={e.dst} bytes={e.nbytes}"
        if e.dst >= 0 else
        f"t={e.start:.9f} {e.tag[0]} {e.tag[1]} root={e.src} bytes={e.nbytes}"
        for e in result.trace
    ]
    return ExecReport(
        mode=mode,
        sim_time=result.sim_time,
        peak_bytes={s.device: s.ledger.peak for s in cluster.ranks},
        messages=result.messages + result.collectives,
        collectives=result.collectives,
        bytes_moved=result.bytes_moved,
        stages=len(schedule.stages),
        deadlocked=result.deadlocked,
        witness=result.witness,
        trace=trace,
    )


def execute(cluster: SimCluster, schedule: TransitionSchedule, mode: str, trace: bool = False) -> ExecReport:
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}", ("mode",))
    if cluster.space != schedule.vps.space:
        raise SimulationError("cluster is not loaded with state for this schedule's model")
    if cluster.num_devices < schedule.num_devices:
        raise SimulationError(f"cluster has {cluster.num_devices} devices, schedule needs {schedule.num_devices}")
    cluster.reset_ledgers()
    runner = _Executor(cluster, schedule, mode)
    programs = {d: runner.program(d) for d in range(schedule.num_devices)}
    transport = Transport(cluster.topology, serialize_outbound=True, trace=trace)
    result = transport.run(programs)
    report = _report(mode, cluster, schedule, result)
    logger.info(
        "Executed %s: sim_time=%.6fs messages=%d bytes=%d%s",
        mode, report.sim_time, report.messages, report.bytes_moved, " DEADLOCK" if report.deadlocked else "",
    )
    return report


def run_send_first(cluster: SimCluster, schedule: TransitionSchedule) -> ExecReport:
    """Every device posts all of a stage's sends before any recv, with no XOR pairing.

    On a blocking transport any pair exchanging in both directions deadlocks;
    used to prove the detector works.
    """
    runner = _Executor(cluster, schedule, "send-first")

    def program(device: int):
        state = cluster.ranks[device]
        for stage in schedule.stages:
            for l in sorted((l for l in stage.layouts if l.src_device == device), key=lambda l: l.dst_device):
                yield send(Message(device, l.dst_device, (stage.index, l.step, 0), l.nbytes, runner.pack(state, l)))
            for l in sorted((l for l in stage.layouts if l.dst_device == device), key=lambda l: l.src_device):
                got = yield recv(l.src_device, device, (stage.index, l.step, 0))
                runner.unpack(state, l, got[(stage.index, l.step, 0)])

    cluster.reset_ledgers()
    programs = {d: program(d) for d in range(schedule.num_devices)}
    result = Transport(cluster.topology).run(programs)
    return _report("send-first", cluster, schedule, result)


def sim_time_ratios(reports: Iterable[ExecReport]) -> Dict[str, Optional[float]]:
    """naive/sync (buffering gain) and sync/async (async gain)."""
    by_mode = {r.mode: r.sim_time for r in reports}
    def ratio(a: str, b: str) -> Optional[float]:
        if a not in by_mode or b not in by_mode or by_mode[b] == 0:
            return None
        return by_mode[a] / by_mode[b]
    return {"buffering": ratio("naive", "buffer-sync"), "async": ratio("buffer-sync", "buffer-async")}
