import pytest

from reshard.main import main


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_plan_matches_golden(capsys, fixtures_dir):
    code, out, err = _run(capsys, "plan", str(fixtures_dir / "pp_merge.yaml"))
    assert code == 0
    assert out == (fixtures_dir / "pp_merge.plan").read_text()
    assert "scalar" in err


def test_plan_is_byte_identical_across_runs(capsys, fixtures_dir):
    first = _run(capsys, "plan", str(fixtures_dir / "scale_out.yaml"))[1]
    second = _run(capsys, "plan", str(fixtures_dir / "scale_out.yaml"))[1]
    assert first and first == second


def test_plan_dump_to_file(capsys, fixtures_dir, tmp_path):
    target = tmp_path / "pp_merge.plan"
    code, out, _ = _run(capsys, "plan", str(fixtures_dir / "pp_merge.yaml"), "--dump", str(target))
    assert code == 0 and out == ""
    assert target.read_text() == (fixtures_dir / "pp_merge.plan").read_text()


def test_identity_plan_prints_nothing(capsys, fixtures_dir):
    code, out, _ = _run(capsys, "plan", str(fixtures_dir / "identity.yaml"))
    assert code == 0
    assert out == ""


def test_schedule_dump(capsys, fixtures_dir):
    code, out, _ = _run(capsys, "plan", str(fixtures_dir / "pp_merge.yaml"), "--schedule")
    assert code == 0
    assert out.startswith("schedule devices=4")


def test_bad_scenario_exits_2(capsys, fixtures_dir):
    code, _, err = _run(capsys, "plan", str(fixtures_dir / "bad_tp3.yaml"))
    assert code == 2
    assert "bad_tp3.yaml:15" in err


def test_missing_argument_exits_2():
    with pytest.raises(SystemExit) as excinfo:
        main(["plan"])
    assert excinfo.value.code == 2


def test_verify(capsys, fixtures_dir):
    code, out, _ = _run(capsys, "verify", str(fixtures_dir / "pp_merge.yaml"))
    assert code == 0
    assert "plan and schedule ok" in out


def test_run_all_modes(capsys, fixtures_dir):
    code, out, _ = _run(capsys, "run", str(fixtures_dir / "pp_merge.yaml"), "--mode", "all")
    assert code == 0
    for mode in ("naive", "buffer-sync", "buffer-async"):
        assert mode in out


def test_run_report_is_reproducible(capsys, fixtures_dir):
    args = ("run", str(fixtures_dir / "scale_out.yaml"), "--mode", "buffer-sync", "--trace", "--seed", "5")
    first = _run(capsys, *args)
    second = _run(capsys, *args)
    assert first[0] == second[0] == 0
    assert first[1] == second[1]


def test_infeasible_budget_exits_1(capsys, fixtures_dir):
    code, _, err = _run(capsys, "run", str(fixtures_dir / "pp_merge.yaml"), "--budget", "8")
    assert code == 1
    assert "infeasible budget" in err


def test_ablate(capsys, fixtures_dir):
    code, out, _ = _run(capsys, "ablate", str(fixtures_dir / "pp_to_dp.yaml"))
    assert code == 0
    assert out.count("->") >= 2


@pytest.mark.parametrize("fixture,ratio", [
    ("node_addition.yaml", "95.55%"),
    ("node_removal.yaml", "92.97%"),
])
def test_scale_reports_overlap_ratio(capsys, fixtures_dir, fixture, ratio):
    code, out, _ = _run(capsys, "scale", str(fixtures_dir / fixture), "--mode", "overlapped")
    assert code == 0
    assert ratio in out


def test_scale_all_modes(capsys, fixtures_dir):
    code, out, _ = _run(capsys, "scale", str(fixtures_dir / "node_addition.yaml"), "--measure-switch")
    assert code == 0
    for mode in ("in-place", "blocking", "overlapped"):
        assert f"({mode})" in out


def test_scale_without_transition_exits_2(capsys, fixtures_dir):
    code, _, err = _run(capsys, "scale", str(fixtures_dir / "pp_merge.yaml"))
    assert code == 2
    assert "transition" in err


def test_campaign(capsys):
    code, out, _ = _run(capsys, "campaign", "--trials", "3", "--mode", "buffer-async", "--seed", "1")
    assert code == 0
    assert out.startswith("campaign seed=1 trials=3")


def test_campaign_with_dropped_transfers(capsys):
    code, out, _ = _run(capsys, "campaign", "--trials", "3", "--mode", "buffer-sync", "--inject-fault", "--fault", "drop")
    assert code == 0
    assert "inject-fault=drop" in out.splitlines()[0]


def test_ledger_and_history(capsys, fixtures_dir, tmp_path):
    db = str(tmp_path / "runs.db")
    assert _run(capsys, "--db", db, "run", str(fixtures_dir / "pp_merge.yaml"))[0] == 0
    assert _run(capsys, "--db", db, "scale", str(fixtures_dir / "node_removal.yaml"))[0] == 0
    code, out, _ = _run(capsys, "--db", db, "history")
    assert code == 0
    lines = out.splitlines()
    assert "scale" in lines[0] and "node-removal" in lines[0]
    assert "run" in lines[1] and "buffer-async" in lines[1]


def test_history_needs_a_ledger(capsys):
    code, _, err = _run(capsys, "history")
    assert code == 2
    assert "no ledger" in err
