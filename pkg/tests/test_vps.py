import itertools

import numpy as np
import pytest

from reshard.errors import ConfigError
from reshard.models import ModelSpec, ParallelConfig, TensorSpec
from reshard.vps import (
    build_vps,
    estimate_state_bytes,
    flat_rank,
    optimizer_region,
    project,
    project_optimizer,
    rank_coord,
    shard_range,
    stage_layers,
)

from .conftest import abc_model, owned_params


def test_offsets_follow_declaration_order(toy_vps):
    offsets = [layout.offset for layout in toy_vps.layouts]
    assert offsets == sorted(offsets)
    assert toy_vps.layouts[0].offset == 0
    assert toy_vps.total_numel == sum(layout.numel for layout in toy_vps.layouts)


def test_space_fingerprint_depends_on_model(toy, toy_vps):
    assert build_vps(toy).space == toy_vps.space
    assert build_vps(abc_model()).space != toy_vps.space


@pytest.mark.parametrize("order", ["pp-dp-tp", "tp-pp-dp", "dp-tp-pp"])
def test_rank_coord_is_a_bijection(order):
    cfg = ParallelConfig(dp=2, tp=2, pp=3, rank_order=order)
    coords = [rank_coord(cfg, r) for r in range(cfg.world_size)]
    assert len(set(coords)) == cfg.world_size
    assert [flat_rank(cfg, c) for c in coords] == list(range(cfg.world_size))


def test_default_order_puts_tp_fastest():
    cfg = ParallelConfig(dp=2, tp=2, pp=2)
    assert [rank_coord(cfg, r).tp_rank for r in range(4)] == [0, 1, 0, 1]
    assert rank_coord(cfg, 4).pp_rank == 1


def test_stage_layers_remainder_first():
    assert [stage_layers(5, 2, r) for r in range(2)] == [(0, 3), (3, 5)]
    assert [stage_layers(4, 4, r) for r in range(4)] == [(0, 1), (1, 2), (2, 3), (3, 4)]


def test_project_matches_brute_force(toy, toy_vps):
    for tp, pp, dp, ep in [(2, 2, 2, 2), (4, 1, 4, 4), (1, 4, 2, 1)]:
        cfg = ParallelConfig(tp=tp, pp=pp, dp=dp, ep=ep)
        for rank in range(cfg.world_size):
            got = set(toy_vps.flat_indices(project(toy_vps, cfg, rank)).tolist())
            assert got == owned_params(toy, cfg, rank)


def test_projections_cover_the_model(toy, toy_vps):
    cfg = ParallelConfig(tp=2, pp=2, dp=2, ep=2)
    covered = set()
    for rank in range(cfg.world_size):
        covered |= set(toy_vps.flat_indices(project(toy_vps, cfg, rank)).tolist())
    assert covered == set(range(toy_vps.total_numel))


def test_indivisible_tp_is_a_config_error(toy_vps):
    with pytest.raises(ConfigError, match="does not divide"):
        project(toy_vps, ParallelConfig(tp=3), 0)


def test_shard_range_ceil_rule():
    assert [shard_range(10, 3, i) for i in range(3)] == [(0, 4), (4, 8), (8, 10)]
    assert shard_range(2, 4, 3) == (2, 2)


def test_optimizer_inversion_abc_fixture():
    vps = build_vps(abc_model())
    cfg = ParallelConfig(dp=2, zero_enabled=True)
    shard0 = project_optimizer(vps, cfg, 0)
    shard1 = project_optimizer(vps, cfg, 1)
    assert vps.split_flat(shard0.flat) == [("A", (0, 30)), ("B", (30, 50))]
    assert vps.split_flat(shard1.flat) == [("B", (50, 75)), ("C", (75, 100))]


@pytest.mark.parametrize("dp", [2, 3, 4])
def test_optimizer_shards_partition_local_span(toy, toy_vps, dp):
    cfg = ParallelConfig(dp=dp, tp=2, pp=2, zero_enabled=True)
    for tp_rank, pp_rank in itertools.product(range(2), range(2)):
        ranks = [r for r in range(cfg.world_size)
                 if (rank_coord(cfg, r).tp_rank, rank_coord(cfg, r).pp_rank) == (tp_rank, pp_rank)]
        shards = [set(toy_vps.flat_indices(project_optimizer(toy_vps, cfg, r)).tolist()) for r in ranks]
        for a, b in itertools.combinations(shards, 2):
            assert not a & b
        local = set(toy_vps.flat_indices(project(toy_vps, cfg, ranks[0])).tolist())
        assert set().union(*shards) == local


def test_optimizer_without_zero():
    vps = build_vps(abc_model())
    cfg = ParallelConfig(dp=2)
    with pytest.raises(ConfigError, match="no sharded optimizer"):
        project_optimizer(vps, cfg, 0)
    assert optimizer_region(vps, cfg, 1).flat == ((0, 100),)


def test_box_indices_row_major(toy_vps):
    layout = toy_vps.tensor("layers.0.proj")
    idx = toy_vps.box_indices("layers.0.proj", ((0, 2), (4, 8)))
    expected = layout.offset + np.array([4, 5, 6, 7, 12, 13, 14, 15])
    assert idx.tolist() == expected.tolist()


def test_state_size_estimate_70b():
    model = ModelSpec(tensors=(TensorSpec(tensor_id="all", shape=(70_000_000_000,), layer=0),))
    assert estimate_state_bytes(model) == pytest.approx(1.26e12, rel=0.01)
