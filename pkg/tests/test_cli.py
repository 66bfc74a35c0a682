"""End-to-end tests of the ``ems-guard`` command line."""

import json

import pandas as pd
import pytest

from ems_guard.cli import _report_backends, main
from ems_guard.tools.netcase import dump_case, load_case


@pytest.fixture(scope="module")
def two_area_file(two_area, tmp_path_factory):
    path = tmp_path_factory.mktemp("cases") / "two_area.json"
    path.write_text(json.dumps(dump_case(two_area.network)))
    return path


def _experiment(tmp_path, case, **overrides):
    document = {
        "case": str(case),
        "targets": [162, 163],
        "n_attacks": 6,
        "n_gaussian": 4,
        "n_cauchy": 4,
        "d_fractions": [0.0, 0.13],
        "output_dir": str(tmp_path / "out"),
    }
    document.update(overrides)
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps(document))
    return path


def test_sced(cases_dir, tmp_path):
    assert main(["sced", "--case", str(cases_dir / "case5.m"), "--out", str(tmp_path)]) == 0
    table = pd.read_csv(tmp_path / "dispatch.csv")
    assert table["element"].iloc[-1] == "total_cost"
    generation = table.loc[table["element"] == "generator", "mw"].sum()
    assert generation == pytest.approx(1000.0, abs=1e-3)


def test_ptdf(cases_dir, tmp_path):
    assert main(["ptdf", "--case", str(cases_dir / "case14.json"), "--out", str(tmp_path)]) == 0
    frame = pd.read_csv(tmp_path / "ptdf.csv", index_col=0)
    assert frame.shape == (20, 14)


def test_attack(cases_dir, tmp_path):
    code = main(["attack", "--case", str(cases_dir / "case14.json"), "--targets", "1",
                 "--alpha", "0.05", "--out", str(tmp_path)])
    assert code == 0
    impact = json.loads((tmp_path / "attack_impact.json").read_text())
    assert impact["target_branch"] == 1
    assert (tmp_path / "attack.jsonl").read_text().count("\n") == 1


def test_attack_needs_single_target(cases_dir, tmp_path):
    case = str(cases_dir / "case14.json")
    code = main(["attack", "--case", case, "--targets", "1,2", "--out", str(tmp_path)])
    assert code == 1


def test_missing_case_file(tmp_path):
    assert main(["sced", "--case", str(tmp_path / "nope.m"), "--out", str(tmp_path)]) == 1


def test_no_case_given(tmp_path):
    assert main(["sced", "--out", str(tmp_path)]) == 1


def test_bad_flag_exits_with_usage_code():
    with pytest.raises(SystemExit) as excinfo:
        main(["sced", "--bogus"])
    assert excinfo.value.code == 1


def test_bad_experiment_value(tmp_path, cases_dir):
    config = _experiment(tmp_path, cases_dir / "case5.m", alpha_cap=1.5)
    assert main(["calibrate", "--config", str(config)]) == 1


def test_unknown_target(tmp_path, two_area_file):
    config = _experiment(tmp_path, two_area_file, targets=[1])
    assert main(["calibrate", "--config", str(config)]) == 1


def test_casegen(tmp_path):
    path = tmp_path / "grid.json"
    assert main(["casegen", "--case", str(path), "--buses", "24", "--seed", "7"]) == 0
    net = load_case(path)
    assert net.n_buses == 24
    assert len(net.rated_branch_ids()) == 3


def test_calibrate_writes_table_and_cache(tmp_path, two_area_file):
    config = _experiment(tmp_path, two_area_file)
    assert main(["calibrate", "--config", str(config)]) == 0
    table = pd.read_csv(tmp_path / "out" / "calibration.csv")
    assert set(table["line"]) == {162, 163}
    assert (table["status"] == "vulnerable").all()
    cache = json.loads((tmp_path / "out" / "signatures.json").read_text())
    assert cache["version"] == 1


def test_separation_is_deterministic(tmp_path, two_area_file):
    outputs = []
    for run in ("a", "b"):
        config = _experiment(tmp_path, two_area_file, output_dir=str(tmp_path / run))
        assert main(["separation", "--config", str(config)]) == 0
        outputs.append((tmp_path / run / "separation.csv").read_bytes())
    assert outputs[0] == outputs[1]

    table = pd.read_csv(tmp_path / "a" / "separation.csv")
    attacks = table[table["kind"] == "attack"]
    # every attack reports all vulnerable assets, one row each
    assert len(attacks) == 12 * 2
    assert all(set(rows["target"]) == {162, 163} for _, rows in attacks.groupby("scenario_id"))
    assert (attacks["attacked"] == attacks["target"]).sum() == 12
    assert set(attacks["attacked"].astype(int)) == {162, 163}
    assert set(table["kind"]) == {"attack", "gaussian", "cauchy"}
    noise = table[table["kind"] != "attack"]
    assert not noise["flagged"].astype(bool).any()
    scenarios = (tmp_path / "a" / "scenarios.jsonl").read_text().splitlines()
    assert len(scenarios) == 12 + 8


def test_ems_battery(tmp_path, two_area_file):
    config = _experiment(tmp_path, two_area_file, d_fractions=[0.0])
    assert main(["ems", "--config", str(config)]) == 0
    table = pd.read_csv(tmp_path / "out" / "ems.csv")
    assert len(table) == 2
    assert (table["status"] == "optimal").all()
    assert (table["cpsced_cost"] >= table["sced_cost"] - 1e-6).all()
    audits = (tmp_path / "out" / "ems_audit.jsonl").read_text().splitlines()
    assert len(audits) == 2


def test_ems_corrupt_snapshot_file(tmp_path, two_area_file):
    snapshots = tmp_path / "snapshots.jsonl"
    snapshots.write_text('{"kind": "attack", "alpha": 0.1, "deviations": {"5": 1.0}}\nnot json\n')
    config = _experiment(tmp_path, two_area_file)
    assert main(["ems", "--config", str(config), "--snapshots", str(snapshots)]) == 1


def test_ems_unknown_bus_in_snapshot(tmp_path, two_area_file):
    snapshots = tmp_path / "snapshots.jsonl"
    snapshots.write_text('{"kind": "gaussian", "alpha": 0.1, "deviations": {"999": 1.0}}\n')
    config = _experiment(tmp_path, two_area_file)
    assert main(["ems", "--config", str(config), "--snapshots", str(snapshots)]) == 1


def test_separation_with_no_scenarios(tmp_path, two_area_file):
    config = _experiment(tmp_path, two_area_file, n_attacks=0, n_gaussian=0, n_cauchy=0)
    assert main(["separation", "--config", str(config)]) == 0
    table = pd.read_csv(tmp_path / "out" / "separation.csv")
    assert table.empty
    assert "npdsb" in table.columns


def test_startup_reports_ready_backends():
    assert _report_backends() == ["highs", "simplex"]
