"""
Simulated cluster state: per-device payload stores and memory ledgers.

Payloads are 64-bit canonical values, canon(seed, k, kind), keyed by global
flat offset k, so a correct transition is checkable by bit equality:

  load_state     fill every src rank's stores from canon
  verify_state   compare every dst rank's stores against canon; list violations
  oracle_reshard gather all state to a virtual coordinator and redistribute it
                 by the dst projections, ignoring plans and schedules
  inject_fault   flip one stored value (detector self-test)
"""

import logging
import random
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import OutOfMemoryError, StateError, Violation
from .models import ParallelConfig, Topology
from .planners import SCALAR_FIELDS, StateKind
from .vps import Vps, optimizer_region, project

logger = logging.getLogger(__name__)

_KIND_SALT = {
    StateKind.PARAMETER: 0x243F6A8885A308D3,
    StateKind.OPTIMIZER: 0x13198A2E03707344,
    StateKind.GRADIENT: 0xA4093822299F31D0,
    StateKind.SCALAR: 0x082EFA98EC4E6C89,
}
_MASK = (1 << 64) - 1

Snapshot = Dict[int, Dict[str, Dict[int, int]]]


def canon(seed: int, indices, kind: StateKind) -> np.ndarray:
    """splitmix64 of (seed, k, kind), vectorized over k."""
    k = np.asarray(indices, dtype=np.uint64)
    x = k ^ np.uint64((seed * 0x9E3779B97F4A7C15) & _MASK) ^ np.uint64(_KIND_SALT[kind])
    with np.errstate(over="ignore"):
        x = x + np.uint64(0x9E3779B97F4A7C15)
        x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        x = x ^ (x >> np.uint64(31))
    return x


def scalar_indices() -> np.ndarray:
    return np.arange(len(SCALAR_FIELDS), dtype=np.int64)


class PayloadStore:
    def __init__(self):
        self._data: Dict[StateKind, Dict[int, int]] = {kind: {} for kind in StateKind}

    def put(self, kind: StateKind, indices: np.ndarray, values: np.ndarray) -> None:
        self._data[kind].update(zip(np.asarray(indices).tolist(), np.asarray(values).tolist()))

    def take(self, kind: StateKind, indices: np.ndarray) -> np.ndarray:
        held = self._data[kind]
        try:
            return np.array([held[k] for k in np.asarray(indices).tolist()], dtype=np.uint64)
        except KeyError as exc:
            raise StateError(f"{kind.value} element {exc.args[0]} is not held") from None

    def get(self, kind: StateKind, k: int) -> Optional[int]:
        return self._data[kind].get(k)

    def drop(self, kind: StateKind, indices: Iterable[int]) -> None:
        held = self._data[kind]
        for k in np.asarray(indices).tolist():
            held.pop(k, None)

    def clear(self, kind: Optional[StateKind] = None) -> None:
        for each in ([kind] if kind else list(StateKind)):
            self._data[each].clear()

    def keys(self, kind: StateKind) -> List[int]:
        return sorted(self._data[kind])

    def count(self, kind: Optional[StateKind] = None) -> int:
        kinds = [kind] if kind else list(StateKind)
        return sum(len(self._data[each]) for each in kinds)

    def flip(self, kind: StateKind, k: int) -> None:
        self._data[kind][k] ^= 1

    def snapshot(self, kinds: Sequence[StateKind]) -> Dict[str, Dict[int, int]]:
        return {kind.value: dict(sorted(self._data[kind].items())) for kind in kinds}


@dataclass
class MemoryLedger:
    """Transient buffer bytes; `cap` None means unlimited."""

    device: int
    cap: Optional[int] = None
    current: int = 0
    peak: int = 0

    def alloc(self, nbytes: int, stage: str) -> None:
        self.current += nbytes
        self.peak = max(self.peak, self.current)
        if self.cap is not None and self.current > self.cap:
            raise OutOfMemoryError(self.device, stage, self.current, self.cap)

    def free(self, nbytes: int) -> None:
        self.current -= nbytes
        if self.current < 0:
            raise StateError(f"ledger of device {self.device} went negative")


@dataclass
class RankState:
    device: int
    store: PayloadStore = field(default_factory=PayloadStore)
    ledger: MemoryLedger = None
    status: str = "running"

    def __post_init__(self):
        if self.ledger is None:
            self.ledger = MemoryLedger(self.device)


class SimCluster:
    def __init__(self, topology: Topology, num_devices: int, memory_cap=None):
        caps = list(memory_cap) if isinstance(memory_cap, (list, tuple)) else [memory_cap] * num_devices
        self.topology = topology
        self.num_devices = num_devices
        self.ranks = [RankState(d, ledger=MemoryLedger(d, caps[d])) for d in range(num_devices)]
        self.space: Optional[str] = None
        self.seed: Optional[int] = None

    def reset_ledgers(self) -> None:
        for state in self.ranks:
            state.ledger.current = 0
            state.ledger.peak = 0
            state.status = "running"

    def snapshot(self, kinds: Sequence[StateKind] = (StateKind.PARAMETER, StateKind.OPTIMIZER, StateKind.SCALAR)) -> Snapshot:
        return {state.device: state.store.snapshot(kinds) for state in self.ranks}

    def stored_elements(self) -> int:
        return sum(state.store.count() for state in self.ranks)


def expected_state(vps: Vps, cfg: ParallelConfig, rank: int, gradients: bool) -> Dict[StateKind, np.ndarray]:
    """Flat offsets a rank must hold under cfg, per kind."""
    params = project(vps, cfg, rank)
    expected = {
        StateKind.PARAMETER: vps.flat_indices(params),
        StateKind.OPTIMIZER: vps.flat_indices(optimizer_region(vps, cfg, rank)),
        StateKind.SCALAR: scalar_indices(),
    }
    if gradients:
        expected[StateKind.GRADIENT] = expected[StateKind.PARAMETER]
    return expected


def load_state(
    cluster: SimCluster,
    vps: Vps,
    cfg: ParallelConfig,
    seed: int,
    devices: Optional[Sequence[int]] = None,
    gradients: bool = True,
) -> SimCluster:
    devices = list(devices) if devices is not None else list(range(cfg.world_size))
    for state in cluster.ranks:
        state.store.clear()
    for rank, device in enumerate(devices):
        store = cluster.ranks[device].store
        for kind, indices in expected_state(vps, cfg, rank, gradients).items():
            store.put(kind, indices, canon(seed, indices, kind))
    cluster.space, cluster.seed = vps.space, seed
    cluster.reset_ledgers()
    logger.debug("Loaded %d elements onto %d devices", cluster.stored_elements(), len(devices))
    return cluster


def verify_state(
    cluster: SimCluster,
    vps: Vps,
    dst_cfg: ParallelConfig,
    seed: int,
    devices: Optional[Sequence[int]] = None,
    gradients: bool = False,
) -> List[Violation]:
    devices = list(devices) if devices is not None else list(range(dst_cfg.world_size))
    violations: List[Violation] = []
    for rank, device in enumerate(devices):
        store = cluster.ranks[device].store
        expected = expected_state(vps, dst_cfg, rank, gradients)
        for kind in StateKind:
            indices = expected.get(kind, np.empty(0, dtype=np.int64))
            values = canon(seed, indices, kind).tolist()
            for k, want in zip(indices.tolist(), values):
                got = store.get(kind, k)
                if got is None:
                    violations.append(Violation("missing element", rank, f"{kind.value} k={k} (device {device})"))
                elif got != want:
                    violations.append(Violation("wrong value", rank, f"{kind.value} k={k} (device {device})"))
            extra = sorted(set(store.keys(kind)) - set(indices.tolist()))
            for k in extra:
                violations.append(Violation("unexpected element", rank, f"{kind.value} k={k} (device {device})"))
    for state in cluster.ranks:
        if state.device not in devices and state.store.count():
            violations.append(Violation("stale state", None, f"departed device {state.device} still holds state"))
    return violations


def oracle_reshard(
    cluster: SimCluster,
    vps: Vps,
    src_cfg: ParallelConfig,
    dst_cfg: ParallelConfig,
    src_devices: Optional[Sequence[int]] = None,
    dst_devices: Optional[Sequence[int]] = None,
    kinds: Sequence[StateKind] = (StateKind.PARAMETER, StateKind.OPTIMIZER, StateKind.SCALAR),
) -> Snapshot:
    """Gather every element from any src replica, then scatter by the dst projections."""
    src_devices = list(src_devices) if src_devices is not None else list(range(src_cfg.world_size))
    dst_devices = list(dst_devices) if dst_devices is not None else list(range(dst_cfg.world_size))

    coordinator: Dict[StateKind, Dict[int, int]] = {kind: {} for kind in kinds}
    for rank, device in enumerate(src_devices):
        store = cluster.ranks[device].store
        for kind in kinds:
            if kind == StateKind.SCALAR and rank != 0:
                continue
            for k in store.keys(kind):
                coordinator[kind].setdefault(k, store.get(kind, k))

    result: Snapshot = {d: {kind.value: {} for kind in kinds} for d in range(cluster.num_devices)}
    for rank, device in enumerate(dst_devices):
        expected = expected_state(vps, dst_cfg, rank, StateKind.GRADIENT in kinds)
        for kind in kinds:
            try:
                result[device][kind.value] = {k: coordinator[kind][k] for k in expected[kind].tolist()}
            except KeyError as exc:
                raise StateError(f"oracle: {kind.value} element {exc.args[0]} held by no src rank") from None
    return result


def inject_fault(cluster: SimCluster, rng: random.Random) -> Tuple[int, StateKind, int]:
    """Flip one bit of one stored element; returns (device, kind, k)."""
    candidates = [(s.device, kind) for s in cluster.ranks for kind in StateKind if s.store.count(kind)]
    device, kind = rng.choice(candidates)
    k = rng.choice(cluster.ranks[device].store.keys(kind))
    cluster.ranks[device].store.flip(kind, k)
    logger.debug("Injected fault on device %d: %s k=%d", device, kind.value, k)
    return device, kind, k
