"""Shared fixtures: scenarios from fixtures/, toy models and a brute-force ownership oracle."""

from pathlib import Path
from typing import Set

import numpy as np
import pytest

from reshard.campaign import toy_model
from reshard.models import ModelSpec, ParallelConfig, TensorSpec, Topology
from reshard.scenario import load_scenario
from reshard.vps import build_vps, rank_coord, stage_layers

FIXTURES = Path(__file__).parent.parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def pp_merge():
    return load_scenario(FIXTURES / "pp_merge.yaml")


@pytest.fixture
def scale_out():
    return load_scenario(FIXTURES / "scale_out.yaml")


@pytest.fixture
def pp_to_dp():
    return load_scenario(FIXTURES / "pp_to_dp.yaml")


@pytest.fixture
def toy():
    return toy_model()


@pytest.fixture
def toy_vps(toy):
    return build_vps(toy)


@pytest.fixture
def topo16():
    return Topology(num_nodes=2, ranks_per_node=8)


def abc_model() -> ModelSpec:
    """Three flat tensors of 30, 45 and 25 elements on one layer."""
    return ModelSpec(tensors=(
        TensorSpec(tensor_id="A", shape=(30,), layer=0),
        TensorSpec(tensor_id="B", shape=(45,), layer=0),
        TensorSpec(tensor_id="C", shape=(25,), layer=0),
    ))


def owned_params(model: ModelSpec, cfg: ParallelConfig, rank: int) -> Set[int]:
    """Global flat offsets a rank holds, enumerated element by element."""
    coord = rank_coord(cfg, rank)
    first, last = stage_layers(model.num_layers, cfg.pp, coord.pp_rank)
    owned = set()
    offset = 0
    for t in model.tensors:
        if first <= t.layer < last:
            idx = np.indices(t.shape).reshape(len(t.shape), -1)
            keep = np.ones(idx.shape[1], dtype=bool)
            if t.tp_shard_axis is not None:
                size = t.shape[t.tp_shard_axis] // cfg.tp
                keep &= idx[t.tp_shard_axis] // size == coord.tp_rank
            if t.is_expert:
                size = t.shape[t.expert_axis] // cfg.ep
                keep &= idx[t.expert_axis] // size == coord.ep_rank
            owned.update((np.flatnonzero(keep) + offset).tolist())
        offset += t.numel
    return owned
