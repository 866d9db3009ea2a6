import csv
import json
import os

import pytest

from conftest import write_replay_store
from nvlab.cli import main
from nvlab.config import ConfigError, RunConfig, build_plan
from nvlab.report import ReportError, build_report, load_trajectories
from nvlab.store import strip_timestamps


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


def stripped_lines(path):
    with open(path, encoding="utf-8") as handle:
        return [strip_timestamps(line) for line in handle if line.strip()]


# --- config ------------------------------------------------------------------

def test_config_round_trips_losslessly(tmp_path):
    config = RunConfig(models=("m1", "m2"), experiments=("E1", "E3"),
                       distributions=("uniform",), repetitions=4, base_seed=11)
    config.to_file(tmp_path / "config.json")
    assert RunConfig.from_file(tmp_path / "config.json") == config


def test_config_errors_name_the_field():
    with pytest.raises(ConfigError, match="repetitions"):
        RunConfig(repetitions=0)
    with pytest.raises(ConfigError, match="experiments"):
        RunConfig(experiments=("E9",))
    with pytest.raises(ConfigError, match="distributions"):
        RunConfig(distributions=("triangular",))
    with pytest.raises(ConfigError, match="credential_env"):
        RunConfig(credential_env="")


def test_config_rejects_unknown_fields():
    with pytest.raises(ConfigError, match="temprature"):
        RunConfig.from_dict({"temprature": 0.5})


def test_config_aliases_normalize():
    config = RunConfig(experiments=("E1",), distributions=("normal",))
    assert config.experiments == ("E1-baseline",)
    assert config.distributions == ("truncated-normal",)


def test_build_plan_skips_undefined_lognormal_risk_neutral():
    from nvlab.agents import AgentSpec
    config = RunConfig(experiments=("E3",), distributions=("uniform", "lognormal"))
    plan = build_plan(config, [AgentSpec("optimal")])
    assert all(c.dist_kind == "uniform" for c in plan.conditions)


# --- CLI ---------------------------------------------------------------------

def simulate(tmp_path, name, *extra):
    out = tmp_path / name
    code = main(["simulate", "--experiment", "E1", "--dist", "uniform",
                 "--agent", "optimal", "--reps", "2", "--seed", "5",
                 "--out", str(out), *extra])
    assert code == 0
    runs = sorted(out.iterdir())
    assert len(runs) == 1
    return runs[0]


def test_simulate_and_report_roundtrip(tmp_path, capsys):
    run_dir = simulate(tmp_path, "sim")
    capsys.readouterr()
    code = main(["report", str(run_dir), "--out", str(tmp_path / "report")])
    assert code == 0
    rows = read_csv(tmp_path / "report" / "bias_table.csv")
    assert rows[0]["deviation_high"] == "0.00"
    assert rows[0]["deviation_low"] == "0.00"
    assert rows[0]["pe_optimal_over_actual_pct_high"] == "100.00"
    assert rows[0]["pe_optimal_over_actual_pct_low"] == "100.00"


def test_simulate_identical_seeds_bit_identical(tmp_path):
    run_a = simulate(tmp_path, "a")
    run_b = simulate(tmp_path, "b")
    assert stripped_lines(run_a / "rounds.jsonl") == stripped_lines(run_b / "rounds.jsonl")
    assert (run_a / "manifest.json").read_text() == (run_b / "manifest.json").read_text()


def test_report_rerun_is_bit_identical(tmp_path, capsys):
    run_dir = simulate(tmp_path, "sim")
    main(["report", str(run_dir), "--out", str(tmp_path / "r1")])
    main(["report", str(run_dir), "--out", str(tmp_path / "r2")])
    for name in sorted(os.listdir(tmp_path / "r1")):
        a = (tmp_path / "r1" / name).read_bytes()
        b = (tmp_path / "r2" / name).read_bytes()
        assert a == b, name


def test_report_does_not_mutate_store(tmp_path):
    run_dir = simulate(tmp_path, "sim")
    before = (run_dir / "rounds.jsonl").read_bytes(), (run_dir / "manifest.json").read_bytes()
    main(["report", str(run_dir), "--out", str(tmp_path / "report")])
    after = (run_dir / "rounds.jsonl").read_bytes(), (run_dir / "manifest.json").read_bytes()
    assert before == after


def test_simulate_rejects_llm_agent(tmp_path, capsys):
    code = main(["simulate", "--agent", "llm", "--out", str(tmp_path / "x")])
    assert code == 2
    assert "config error" in capsys.readouterr().err


def test_run_with_llm_and_missing_credential_fails_fast(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("NVLAB_TEST_KEY", raising=False)
    config = RunConfig(credential_env="NVLAB_TEST_KEY")
    config.to_file(tmp_path / "config.json")
    code = main(["run", "--config", str(tmp_path / "config.json"),
                 "--out", str(tmp_path / "x")])
    assert code == 2
    err = capsys.readouterr().err
    assert "NVLAB_TEST_KEY" in err


def test_run_with_scripted_agent_needs_no_credential(tmp_path, monkeypatch):
    monkeypatch.delenv("OPENAI_API_KEY", raising=False)
    code = main(["run", "--experiment", "E1", "--dist", "uniform",
                 "--agent", "optimal", "--reps", "1",
                 "--out", str(tmp_path / "run")])
    assert code == 0


def test_print_config_dumps_resolved_plan(tmp_path, capsys):
    code = main(["simulate", "--experiment", "E1", "--dist", "uniform",
                 "--agent", "optimal", "--reps", "3", "--print-config",
                 "--out", str(tmp_path / "x")])
    assert code == 0
    resolved = json.loads(capsys.readouterr().out)
    assert resolved["config"]["repetitions"] == 3
    assert resolved["plans"][0]["run_id"].startswith("run-")
    assert not (tmp_path / "x").exists()  # print-only, nothing executed


def test_validate_prompts_cli_passes(capsys):
    assert main(["validate-prompts"]) == 0
    out = capsys.readouterr().out
    assert out.count("ok:") == 3


def test_validate_prompts_fails_on_template_edit(tmp_path, capsys, monkeypatch):
    import shutil
    import nvlab.prompts as prompts
    assets = tmp_path / "assets"
    shutil.copytree(prompts._asset_root(), assets)
    base = assets / "templates" / "base.txt"
    base.write_text(base.read_text().replace("wodgets", "widgets"), encoding="utf-8")
    monkeypatch.setattr(prompts, "_asset_root", lambda: assets)
    monkeypatch.setattr(prompts, "_DEFAULT_TEMPLATES", None)
    assert main(["validate-prompts"]) == 2
    out = capsys.readouterr().out
    assert "MISMATCH" in out and "widgets" in out


def test_validate_prompts_reports_missing_golden(tmp_path, capsys, monkeypatch):
    import shutil
    import nvlab.prompts as prompts
    assets = tmp_path / "assets"
    shutil.copytree(prompts._asset_root(), assets)
    (assets / "golden" / "e2_low_normal_round5.txt").unlink()
    monkeypatch.setattr(prompts, "_asset_root", lambda: assets)
    monkeypatch.setattr(prompts, "_DEFAULT_TEMPLATES", None)
    assert main(["validate-prompts"]) == 2
    assert "missing golden file" in capsys.readouterr().out


def test_report_errors_on_empty_input(tmp_path, capsys):
    empty = tmp_path / "nothing"
    empty.mkdir()
    code = main(["report", str(empty), "--out", str(tmp_path / "r")])
    assert code == 5  # no manifest -> integrity error


def llm_config(tmp_path, stub_server, monkeypatch, **overrides):
    monkeypatch.setenv("NVLAB_TEST_KEY", "sk-test")
    config = RunConfig(endpoint=stub_server.url, credential_env="NVLAB_TEST_KEY",
                       models=("test-model",), max_retries=1, backoff_base=0.001,
                       **overrides)
    path = tmp_path / "config.json"
    config.to_file(path)
    return path


def test_run_exit_code_for_parse_failures(tmp_path, stub_server, monkeypatch, capsys):
    stub_server.reply_fn = lambda body: "no decision from me"
    config_path = llm_config(tmp_path, stub_server, monkeypatch)
    code = main(["run", "--config", str(config_path), "--experiment", "E1",
                 "--dist", "uniform", "--order", "high-first", "--reps", "1",
                 "--rounds", "2", "--out", str(tmp_path / "runs")])
    assert code == 4
    assert "parse" in capsys.readouterr().err


def test_run_exit_code_for_transport_failures(tmp_path, stub_server, monkeypatch, capsys):
    stub_server.mode = "always-429"
    config_path = llm_config(tmp_path, stub_server, monkeypatch)
    code = main(["run", "--config", str(config_path), "--experiment", "E1",
                 "--dist", "uniform", "--order", "high-first", "--reps", "1",
                 "--rounds", "2", "--out", str(tmp_path / "runs")])
    assert code == 3
    assert "transport" in capsys.readouterr().err


def test_run_against_stub_endpoint_completes(tmp_path, stub_server, monkeypatch, capsys):
    config_path = llm_config(tmp_path, stub_server, monkeypatch)
    code = main(["run", "--config", str(config_path), "--experiment", "E1",
                 "--dist", "uniform", "--order", "high-first", "--reps", "1",
                 "--rounds", "3", "--out", str(tmp_path / "runs")])
    assert code == 0
    run_dirs = list((tmp_path / "runs").iterdir())
    assert len(run_dirs) == 1
    code = main(["report", str(run_dirs[0]), "--out", str(tmp_path / "report")])
    assert code == 0
    rows = read_csv(tmp_path / "report" / "bias_table.csv")
    assert rows[0]["agent"] == "test-model"
    assert rows[0]["mean_order_high"] == "150.00"  # the stub always orders 150


# --- report content ----------------------------------------------------------

def test_report_replay_fixture_matches_reported_deviations(tmp_path):
    write_replay_store(tmp_path / "fixture", [
        ("uniform", "model-a", 182.42, 175.25),
        ("truncated-normal", "model-a", 181.07, 175.58),
    ])
    bundle = build_report([tmp_path / "fixture"], tmp_path / "report")
    rows = {(r["distribution"], r["agent"]): r for r in read_csv(bundle.files["bias_table.csv"])}
    uniform = rows[("uniform", "model-a")]
    assert uniform["deviation_high"] == "-42.58"
    assert uniform["deviation_low"] == "100.25"
    normal = rows[("truncated-normal", "model-a")]
    assert normal["deviation_high"] == "-2.93"
    assert normal["deviation_low"] == "58.58"


def test_report_compare_humans_adds_sourced_rows(tmp_path):
    write_replay_store(tmp_path / "fixture", [
        ("uniform", "model-a", 182.42, 175.25),
        ("uniform", "model-b", 176.03, 168.89),
    ])
    bundle = build_report([tmp_path / "fixture"], tmp_path / "report", compare_humans=True)
    rows = read_csv(bundle.files["bias_table.csv"])
    human = [r for r in rows if r["agent"] == "humans"]
    assert len(human) == 1  # one reference row per distribution, not per agent
    assert human[0]["deviation_high"] == "-48.17"
    assert human[0]["deviation_low"] == "59.06"
    assert "Schweitzer" in human[0]["source"]
    mas_rows = read_csv(bundle.files["mas_table.csv"])
    human_mas = [r for r in mas_rows if r["agent"] == "humans"]
    assert human_mas and human_mas[0]["mas_high"] == "0.360"
    quartiles = read_csv(bundle.files["quartile_table.csv"])
    human_quartiles = [r for r in quartiles if r["agent"] == "humans"]
    assert {r["error_quartile"] for r in human_quartiles} == {"Q1", "Q4"}


def test_report_word_frequencies(tmp_path):
    write_replay_store(tmp_path / "fixture", [("uniform", "model-a", 182.42, 175.25)])
    bundle = build_report([tmp_path / "fixture"], tmp_path / "report")
    rows = read_csv(bundle.files["word_frequencies.csv"])
    terms = {r["term"]: int(r["count"]) for r in rows}
    assert terms["replay"] == 200
    assert "the" not in terms


def test_report_round_trajectories_shape(tmp_path):
    write_replay_store(tmp_path / "fixture", [("uniform", "model-a", 182.45, 175.25)],
                       reps=2, rounds=10)
    bundle = build_report([tmp_path / "fixture"], tmp_path / "report")
    rows = read_csv(bundle.files["round_trajectories.csv"])
    assert len(rows) == 20  # 2 blocks x 10 rounds
    assert {r["margin"] for r in rows} == {"high", "low"}
    assert all(r["n_repetitions"] == "2" for r in rows)


def test_load_trajectories_excludes_incomplete(tmp_path):
    run_dir = tmp_path / "fixture"
    write_replay_store(run_dir, [("uniform", "model-a", 182.45, 175.25)], reps=2, rounds=10)
    lines = (run_dir / "rounds.jsonl").read_text().splitlines()
    (run_dir / "rounds.jsonl").write_text("\n".join(lines[:-3]) + "\n")
    complete = load_trajectories([run_dir])
    assert len(complete) == 3
    everything = load_trajectories([run_dir], include_incomplete=True)
    assert len(everything) == 4


def test_report_requires_complete_trajectories(tmp_path):
    run_dir = tmp_path / "fixture"
    write_replay_store(run_dir, [("uniform", "model-a", 182.4, 175.2)], reps=1, rounds=5)
    lines = (run_dir / "rounds.jsonl").read_text().splitlines()
    (run_dir / "rounds.jsonl").write_text("\n".join(lines[:3]) + "\n")
    with pytest.raises(ReportError):
        build_report([run_dir], tmp_path / "report")
