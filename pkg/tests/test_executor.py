import random

import pytest

from reshard.campaign import make_scenario, sample_pair, toy_model
from reshard.cluster import inject_fault, load_state, verify_state
from reshard.errors import ConfigError, OutOfMemoryError
from reshard.executor import MODES, execute, run_send_first, sim_time_ratios
from reshard.pipeline import new_cluster, prepare, reverse_scenario, simulate, simulate_all
from reshard.scenario import load_scenario
from reshard.scheduler import drop_transfer
from reshard.vps import build_vps


def _loaded(prepared):
    cluster = new_cluster(prepared)
    plan = prepared.plan
    load_state(cluster, prepared.vps, plan.src_cfg, prepared.scenario.seed, plan.world_map.src_devices)
    return cluster


def test_identity_moves_nothing(fixtures_dir):
    prepared = prepare(load_scenario(fixtures_dir / "identity.yaml"))
    for outcome in simulate_all(prepared):
        assert outcome.ok
        assert outcome.report.messages == 0
        assert outcome.report.sim_time == 0.0


@pytest.mark.parametrize("mode", MODES)
def test_pp_merge_every_mode_verifies(pp_merge, mode):
    outcome = simulate(prepare(pp_merge), mode)
    assert outcome.violations == []
    assert outcome.oracle_match
    assert not outcome.report.deadlocked
    assert outcome.report.sim_time > 0


def test_naive_moves_every_planned_byte(pp_merge):
    prepared = prepare(pp_merge)
    report = simulate(prepared, "naive").report
    plan = prepared.plan
    assert report.bytes_moved == plan.bytes_moved + sum(t.bytes for t in plan.scalar_transfers())
    assert report.collectives == 0


@pytest.mark.parametrize("reverse", [False, True])
def test_pp_to_dp_buffering_and_async_each_help(pp_to_dp, reverse):
    scenario = reverse_scenario(pp_to_dp) if reverse else pp_to_dp
    reports = {o.report.mode: o.report for o in simulate_all(prepare(scenario))}
    assert reports["buffer-async"].sim_time < reports["buffer-sync"].sim_time < reports["naive"].sim_time
    ratios = sim_time_ratios(reports.values())
    assert ratios["buffering"] > 1 and ratios["async"] > 1


def test_send_first_deadlocks_with_witness(pp_merge):
    prepared = prepare(pp_merge)
    report = run_send_first(_loaded(prepared), prepared.schedule)
    assert report.deadlocked
    assert len(report.witness) >= 2


@pytest.mark.parametrize("mode", MODES)
def test_peak_stays_within_budget(scale_out, mode):
    prepared = prepare(scale_out)
    outcome = simulate(prepared, mode)
    assert outcome.ok
    assert 0 < outcome.report.max_peak <= prepared.schedule.budget


def test_memory_cap_raises_out_of_memory(pp_merge):
    prepared = prepare(pp_merge.model_copy(update={"memory_cap": 8}))
    with pytest.raises(OutOfMemoryError):
        simulate(prepared, "buffer-sync")


def test_unknown_mode_is_a_config_error(pp_merge):
    prepared = prepare(pp_merge)
    with pytest.raises(ConfigError, match="unknown mode"):
        execute(_loaded(prepared), prepared.schedule, "carrier-pigeon")


@pytest.mark.parametrize("mode", MODES)
def test_scale_out_round_trip_restores_source_state(scale_out, mode):
    forward = prepare(scale_out)
    backward = prepare(reverse_scenario(scale_out))
    cluster = _loaded(forward)
    assert simulate(forward, mode, cluster=cluster).ok
    second = simulate(backward, mode, cluster=cluster)
    assert second.ok
    assert verify_state(cluster, forward.vps, scale_out.src, scale_out.seed, forward.plan.world_map.src_devices) == []


@pytest.mark.parametrize("trial", range(25))
def test_sampled_pair_round_trip_restores_source_state(trial):
    rng = random.Random(1000 + trial)
    model = toy_model()
    vps = build_vps(model)
    src, dst = sample_pair(rng, model, 16)
    scenario = make_scenario(trial, model, src, dst, rng.randrange(1 << 32))
    forward = prepare(scenario, vps=vps)
    backward = prepare(reverse_scenario(scenario), vps=vps)
    devices = forward.plan.world_map
    for mode in MODES:
        cluster = _loaded(forward)
        assert simulate(forward, mode, cluster=cluster).ok
        assert verify_state(cluster, vps, dst, scenario.seed, devices.dst_devices) == []
        assert simulate(backward, mode, cluster=cluster).ok
        assert verify_state(cluster, vps, src, scenario.seed, devices.src_devices) == []


def test_injected_fault_is_detected(pp_merge):
    prepared = prepare(pp_merge)
    cluster = _loaded(prepared)
    assert simulate(prepared, "buffer-async", cluster=cluster).ok
    inject_fault(cluster, random.Random(0))
    plan = prepared.plan
    violations = verify_state(cluster, prepared.vps, plan.dst_cfg, pp_merge.seed, plan.world_map.dst_devices)
    assert len(violations) == 1
    assert violations[0].code == "wrong value"


def test_execution_is_deterministic(pp_to_dp):
    prepared = prepare(pp_to_dp)
    first = simulate(prepared, "buffer-async", trace=True).report
    second = simulate(prepared, "buffer-async", trace=True).report
    assert first.sim_time == second.sim_time
    assert first.trace == second.trace
    assert first.trace


def test_gradients_migrate_when_requested(pp_merge):
    prepared = prepare(pp_merge, gradients="migrate")
    outcome = simulate(prepared, "buffer-sync")
    assert outcome.ok


def test_dropped_transfer_is_detected(pp_merge):
    prepared = prepare(pp_merge)
    broken, victim = drop_transfer(prepared.schedule, random.Random(1))
    cluster = _loaded(prepared)
    report = execute(cluster, broken, "buffer-sync")
    assert not report.deadlocked
    plan = prepared.plan
    violations = verify_state(cluster, prepared.vps, plan.dst_cfg, pp_merge.seed, plan.world_map.dst_devices)
    assert any(v.code == "missing element" for v in violations)
    assert victim not in [t for stage in broken.stages for t in stage.transfers]
