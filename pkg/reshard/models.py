"""
Pydantic models for everything that crosses the scenario-file boundary.

Field-level constraints live on the models; cross-model consistency (a parallel
configuration against the model it shards, world maps against world sizes) is
checked by the explicit check_* methods so the scenario loader can anchor each
diagnostic to the offending YAML line.
"""

import math
from typing import Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, PositiveInt, field_validator, model_validator

from .errors import ConfigError

RANK_AXES = ("pp", "dp", "tp")


class TensorSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    tensor_id: str = Field(min_length=1)
    shape: Tuple[PositiveInt, ...] = Field(min_length=1)
    layer: int = Field(ge=0)
    tp_shard_axis: Optional[int] = None
    is_expert: bool = False
    expert_axis: Optional[int] = None
    dtype_bytes: PositiveInt = 2

    @model_validator(mode="after")
    def _check_axes(self) -> "TensorSpec":
        ndim = len(self.shape)
        for name in ("tp_shard_axis", "expert_axis"):
            axis = getattr(self, name)
            if axis is not None and not 0 <= axis < ndim:
                raise ValueError(f"{name}={axis} out of range for shape {list(self.shape)}")
        if self.is_expert != (self.expert_axis is not None):
            raise ValueError("expert_axis is required iff is_expert")
        if self.expert_axis is not None and self.expert_axis == self.tp_shard_axis:
            raise ValueError("expert_axis must differ from tp_shard_axis")
        return self

    @property
    def numel(self) -> int:
        return math.prod(self.shape)


class ModelSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    tensors: Tuple[TensorSpec, ...] = ()
    num_layers: PositiveInt = 1
    num_experts: PositiveInt = 1

    def check(self) -> None:
        """Raise ConfigError on duplicate ids, out-of-range layers or bad expert extents."""
        seen = set()
        for i, t in enumerate(self.tensors):
            if t.tensor_id in seen:
                raise ConfigError(f"duplicate tensor_id {t.tensor_id!r}", ("model", "tensors", i, "tensor_id"))
            seen.add(t.tensor_id)
            if t.layer >= self.num_layers:
                raise ConfigError(
                    f"tensor {t.tensor_id!r} layer {t.layer} >= num_layers {self.num_layers}",
                    ("model", "tensors", i, "layer"),
                )
            if t.is_expert and t.shape[t.expert_axis] != self.num_experts:
                raise ConfigError(
                    f"expert tensor {t.tensor_id!r} has extent {t.shape[t.expert_axis]} "
                    f"along expert_axis, expected num_experts={self.num_experts}",
                    ("model", "tensors", i, "shape"),
                )

    @property
    def total_numel(self) -> int:
        return sum(t.numel for t in self.tensors)


class ParallelConfig(BaseModel):
    """(dp, tp, pp, ep, zero) plus the rank-ordering convention, slowest axis first."""

    model_config = ConfigDict(frozen=True)

    dp: PositiveInt = 1
    tp: PositiveInt = 1
    pp: PositiveInt = 1
    ep: PositiveInt = 1
    zero_enabled: bool = False
    rank_order: str = "pp-dp-tp"

    @field_validator("rank_order")
    @classmethod
    def _check_order(cls, value: str) -> str:
        if sorted(value.split("-")) != sorted(RANK_AXES):
            raise ValueError(f"rank_order must be a permutation of {'-'.join(RANK_AXES)}, got {value!r}")
        return value

    @model_validator(mode="after")
    def _check_ep(self) -> "ParallelConfig":
        if self.dp % self.ep:
            raise ValueError(f"ep={self.ep} must divide dp={self.dp}")
        return self

    @property
    def world_size(self) -> int:
        return self.dp * self.tp * self.pp

    @property
    def edp(self) -> int:
        return self.dp // self.ep

    @property
    def order(self) -> Tuple[str, ...]:
        return tuple(self.rank_order.split("-"))

    def label(self) -> str:
        zero = "+zero" if self.zero_enabled else ""
        ep = f",ep={self.ep}" if self.ep > 1 else ""
        return f"(tp={self.tp},pp={self.pp},dp={self.dp}{ep}){zero}"

    def check_model(self, model: ModelSpec, where: Tuple = ()) -> None:
        """Divisibility and stage-count checks against the model this config shards."""
        if self.pp > model.num_layers:
            raise ConfigError(f"pp={self.pp} exceeds num_layers={model.num_layers}", where + ("pp",))
        if model.num_experts % self.ep:
            raise ConfigError(f"ep={self.ep} does not divide num_experts={model.num_experts}", where + ("ep",))
        for t in model.tensors:
            if t.tp_shard_axis is not None and t.shape[t.tp_shard_axis] % self.tp:
                raise ConfigError(
                    f"tp={self.tp} does not divide extent {t.shape[t.tp_shard_axis]} "
                    f"of {t.tensor_id!r} axis {t.tp_shard_axis}",
                    where + ("tp",),
                )


class PrecisionPolicy(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    param_bytes: int
    grad_bytes: int
    master_bytes: int
    moment_bytes: int  # per moment; Adam keeps two

    @property
    def bytes_per_element(self) -> int:
        return self.param_bytes + self.grad_bytes + self.master_bytes + 2 * self.moment_bytes

    @property
    def optimizer_bytes(self) -> int:
        """Width of one optimizer element moved during a transition."""
        return self.master_bytes + 2 * self.moment_bytes


POLICIES: Dict[str, PrecisionPolicy] = {
    "bf16-fp32-mixed": PrecisionPolicy(name="bf16-fp32-mixed", param_bytes=2, grad_bytes=4, master_bytes=4, moment_bytes=4),
    "fp32": PrecisionPolicy(name="fp32", param_bytes=4, grad_bytes=4, master_bytes=0, moment_bytes=4),
}


def get_policy(policy: Union[str, PrecisionPolicy]) -> PrecisionPolicy:
    if isinstance(policy, PrecisionPolicy):
        return policy
    try:
        return POLICIES[policy]
    except KeyError:
        raise ConfigError(f"unknown precision policy {policy!r}; known: {', '.join(POLICIES)}", ("precision",)) from None


class Topology(BaseModel):
    """Two-tier bandwidth model. Bandwidths are bytes per simulated second."""

    model_config = ConfigDict(frozen=True)

    num_nodes: PositiveInt = 1
    ranks_per_node: PositiveInt = 8
    intra_node_bw: float = Field(default=150e9, gt=0)
    inter_node_bw: float = Field(default=25e9, gt=0)
    per_message_latency: float = Field(default=1e-5, ge=0)
    device_bw: Optional[float] = Field(default=None, gt=0)

    @property
    def capacity(self) -> int:
        return self.num_nodes * self.ranks_per_node

    @property
    def pack_bw(self) -> float:
        return self.device_bw if self.device_bw is not None else 10 * self.inter_node_bw

    def node(self, device: int) -> int:
        return device // self.ranks_per_node

    def bandwidth(self, a: int, b: int) -> float:
        return self.intra_node_bw if self.node(a) == self.node(b) else self.inter_node_bw

    def transfer_time(self, a: int, b: int, nbytes: int) -> float:
        return self.per_message_latency + nbytes / self.bandwidth(a, b)

    def pack_time(self, nbytes: int) -> float:
        return nbytes / self.pack_bw

    def collective_time(self, kind: str, root: int, participants, nbytes: int) -> float:
        """Broadcast pays ceil(log2 P) latencies; scatter and gather pay one."""
        bw = min(self.bandwidth(root, p) for p in participants if p != root)
        if kind == "broadcast":
            return math.ceil(math.log2(len(participants))) * self.per_message_latency + nbytes / bw
        return self.per_message_latency + nbytes / bw


class BatchConfig(BaseModel):
    global_batch_size: PositiveInt
    micro_batch_size: PositiveInt = 1
    consumed_samples: int = Field(default=0, ge=0)
    new_global_batch_size: Optional[PositiveInt] = None


class WorldMapSpec(BaseModel):
    """Physical device id of every src-world and dst-world rank."""

    src_devices: Optional[List[int]] = None
    dst_devices: Optional[List[int]] = None


class WorldTransition(BaseModel):
    old_nodes: List[str] = Field(default_factory=list)
    new_nodes: List[str] = Field(default_factory=list)
    init_cost: Optional[float] = Field(default=None, ge=0)
    train_step_cost: float = Field(gt=0)
    switch_cost: float = Field(ge=0)
    window_steps: Optional[int] = Field(default=None, ge=0)
    node_count: Optional[PositiveInt] = None


class Scenario(BaseModel):
    version: Literal[1]
    name: str = "scenario"
    model: ModelSpec
    topology: Topology = Topology()
    src: ParallelConfig
    dst: ParallelConfig
    world_map: WorldMapSpec = WorldMapSpec()
    memory_budget: Union[PositiveInt, List[PositiveInt]] = 1 << 30
    memory_cap: Optional[PositiveInt] = None
    seed: int = 0
    precision: str = "bf16-fp32-mixed"
    gradients: Literal["drop", "migrate"] = "drop"
    batch: Optional[BatchConfig] = None
    transition: Optional[WorldTransition] = None

    def check(self) -> None:
        """Cross-field consistency; raises ConfigError with the offending path."""
        self.model.check()
        self.src.check_model(self.model, ("src",))
        self.dst.check_model(self.model, ("dst",))
        get_policy(self.precision)
        if self.src.zero_enabled != self.dst.zero_enabled:
            raise ConfigError("transitions that toggle zero_enabled are not supported", ("dst", "zero_enabled"))
        for side, cfg in (("src", self.src), ("dst", self.dst)):
            devices = getattr(self.world_map, f"{side}_devices")
            if devices is not None and len(devices) != cfg.world_size:
                raise ConfigError(
                    f"world_map.{side}_devices lists {len(devices)} devices for world size {cfg.world_size}",
                    ("world_map", f"{side}_devices"),
                )
        num_devices = self.num_devices
        if num_devices > self.topology.capacity:
            raise ConfigError(
                f"{num_devices} devices exceed topology capacity {self.topology.capacity}", ("topology",)
            )
        if isinstance(self.memory_budget, list) and len(self.memory_budget) != num_devices:
            raise ConfigError(
                f"memory_budget lists {len(self.memory_budget)} values for {num_devices} devices", ("memory_budget",)
            )

    @property
    def num_devices(self) -> int:
        devices = set(self.world_map.src_devices or range(self.src.world_size))
        devices |= set(self.world_map.dst_devices or range(self.dst.world_size))
        return max(devices) + 1

    def budgets(self) -> List[int]:
        if isinstance(self.memory_budget, list):
            return list(self.memory_budget)
        return [self.memory_budget] * self.num_devices
