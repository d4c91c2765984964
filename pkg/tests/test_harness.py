import json
from dataclasses import replace
from pathlib import Path

import pytest

from cpda_lab.cli import main
from cpda_lab.errors import ConfigError
from cpda_lab.harness import (
    ExperimentConfig,
    ExperimentReport,
    config_from_dict,
    emit_report,
    load_config,
    run_experiment,
)
from cpda_lab.simcore import TopologyConfig

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SMALL = {"master_seed": 3, "trials": 2, "topology": {"node_count": 50, "radius": 0.25}}


def test_defaults():
    cfg = config_from_dict({})
    assert cfg == ExperimentConfig()
    assert cfg.topology.node_count == 100
    assert cfg.cpda.params.leader_seed_efficient == 2**40


@pytest.mark.parametrize("raw", [
    {"bogus": 1},
    {"topology": {"radius": 0.2, "colour": "red"}},
    {"topology": {"node_count": 2}},
    {"clustering": {"p_c": 0}},
    {"keydist": {"pool_size": 10, "ring_size": 6}},
    {"cpda": {"mode": "turbo"}},
    {"adversary": {"role": "collude"}},
    {"adversary": {}},
    {"trials": -1},
    {"output": {"path": "x"}},
])
def test_invalid_configs(raw):
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_shipped_configs_load():
    for path in sorted(CONFIGS.glob("*.toml")):
        load_config(path)


def test_bad_toml(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("trials = [\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_replay_is_identical():
    cfg = config_from_dict(SMALL)
    assert run_experiment(cfg).trials == run_experiment(cfg).trials


def test_workers_do_not_change_output():
    cfg = config_from_dict(SMALL)
    assert run_experiment(replace(cfg, workers=2)).trials == run_experiment(cfg).trials


def test_honest_totals_match():
    report = run_experiment(config_from_dict({**SMALL, "trials": 3}))
    for trial in report.trials:
        assert trial["server_total"] == trial["covered_sum"]
        assert trial["violations"] == []
    assert report.summary["server_total_matches"]["min"] == 1


def test_fig1_config_runs():
    report = run_experiment(load_config(CONFIGS / "fig1.toml"))
    trial = report.trials[0]
    assert trial["topology"] == {"nodes": 9, "edges": 10, "server_component": 9}
    assert trial["server_total"] == trial["covered_sum"]


def test_defended_leader_attack_always_rejected():
    report = run_experiment(load_config(CONFIGS / "leader_attack_defended.toml"))
    attacks = [a for t in report.trials for a in t["attacks"]]
    assert attacks
    assert {a["defense_verdict"] for a in attacks} == {"REJECTED"}
    assert sum(a["recovered_exact"] for a in attacks) == 0


def test_undefended_leader_attack_recovers():
    report = run_experiment(config_from_dict({**SMALL, "adversary": {"role": "leader"}}))
    attacks = [a for t in report.trials for a in t["attacks"] if a.get("defense_verdict") != "REJECTED"]
    assert attacks
    assert all(a["recovered_exact"] == a["targets"] for a in attacks)


def test_emit_empty_report(tmp_path):
    emit_report(ExperimentReport({}, []), tmp_path)
    assert (tmp_path / "trials.jsonl").read_text() == ""
    assert (tmp_path / "summary.csv").read_text() == "metric,mean,min,max\n"


def test_emit_is_byte_identical(tmp_path):
    report = run_experiment(config_from_dict({**SMALL, "trials": 3}))
    emit_report(report, tmp_path / "a")
    emit_report(report, tmp_path / "b")
    lines = (tmp_path / "a" / "trials.jsonl").read_text().splitlines()
    assert len(lines) == 3
    assert [json.loads(line)["trial"] for line in lines] == [0, 1, 2]
    for name in ("trials.jsonl", "summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_cli_simulate(tmp_path, capsys):
    assert main(["simulate", "--config", str(CONFIGS / "fig1.toml"), "--out", str(tmp_path)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["trials"] == 1 and out["violations"] == 0
    assert (tmp_path / "trials.jsonl").exists()


def test_cli_bad_config(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text("[topology]\nnode_count = 1\n")
    assert main(["simulate", "--config", str(path)]) == 1
    assert "node_count" in capsys.readouterr().err


def test_cli_attack(capsys):
    assert main(["attack", "--scenario", "leader", "--defenses", "seeds", "--trials", "20"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["rejection_rate"] == 1.0 and out["recovered_exact"] == 0


def test_cli_keystats(capsys):
    assert main(["keystats", "--K", "4", "--k", "2", "--samples", "2000"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["p_connect_closed_form"] == pytest.approx(5 / 6)
    assert out["p_overhear"] == 0.5


def test_cli_formation(capsys):
    assert main(["formation", "--config", str(CONFIGS / "fig1.toml")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["violations"] == []
