import json

import pytest

from criticpi2 import cli
from criticpi2.config import ConfigError, ExperimentConfig, parse_config
from criticpi2.nn import load_params

FAST = [
    "--set", "networks.hidden=[8]",
    "--set", "planner.K=4",
    "--set", "planner.M=2",
    "--set", "planner.baseline_H=3",
    "--set", "training.epochs=2",
    "--set", "training.batch_size=16",
    "--set", "env.steps_per_epoch=20",
]


def fast_cfg(*extra):
    return parse_config(None, [FAST[i] for i in range(1, len(FAST), 2)] + list(extra))


def test_empty_file_gives_defaults(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("")
    assert parse_config(path) == ExperimentConfig()


def test_override_and_lambda_alias():
    cfg = parse_config(None, ["planner.K=50", "planner.lambda=0.5"])
    assert cfg.planner.K == 50 and cfg.planner.lam == 0.5


def test_negative_lambda_names_the_key():
    with pytest.raises(ConfigError, match="lambda"):
        parse_config(None, ["planner.lambda=-1"])


def test_critic_value_unit_must_be_positive():
    with pytest.raises(ConfigError, match="critic_value_steps"):
        parse_config(None, ["networks.critic_value_steps=0"])


def test_unknown_keys_are_listed(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"planner": {"K": 10, "bogus": 1, "also_bad": 2}}))
    with pytest.raises(ConfigError) as err:
        parse_config(path)
    assert "bogus" in str(err.value) and "also_bad" in str(err.value)


def test_unreadable_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        parse_config(bad)


def test_exit_code_one_on_config_error(tmp_path, capsys):
    assert cli.main(["train", "--set", "planner.lambda=-1", "--out", str(tmp_path)]) == 1
    assert "lambda" in capsys.readouterr().err


def test_exit_code_two_on_runtime_error(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("simulated failure")

    monkeypatch.setattr(cli, "run_experiment", boom)
    assert cli.main(["train", "--out", str(tmp_path)]) == 2


def test_train_writes_outputs_and_is_byte_identical(tmp_path):
    args = ["train", *FAST, "--set", "training.episodes=2", "--seed", "3"]
    assert cli.main([*args, "--out", str(tmp_path / "a")]) == 0
    assert cli.main([*args, "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "results.csv").read_bytes()
    assert a == (tmp_path / "b" / "results.csv").read_bytes()
    lines = a.decode("ascii").splitlines()
    assert lines[0] == ",".join(cli.CSV_COLUMNS) and len(lines) == 3
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["agent"] == "critic_pi2" and summary["seed"] == 3 and summary["episodes"] == 2
    for name in ("dynamics", "critic", "actor"):
        assert load_params(tmp_path / "a" / "models" / f"{name}.bin").flat.size > 0


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV_VAR, str(tmp_path / "env_out"))
    assert cli.main(["train", *FAST, "--set", "training.episodes=1"]) == 0
    assert (tmp_path / "env_out" / "results.csv").exists()
    assert cli.resolve_out("explicit") == cli.Path("explicit")


def test_final_return_prefers_evaluation():
    cfg = fast_cfg("training.episodes=2")
    rows = cli.run_experiment(cfg).rows
    assert cli.final_return(rows) == rows[-1].eval_return
    assert cli.final_return([]) is None


def test_benchmark_report(tmp_path):
    report = cli.run_benchmark(fast_cfg(), calls=3)
    assert set(report["results"]) == {"critic_pi2", "vanilla_pi2", "mpc", "ddpg"}
    for name, row in report["results"].items():
        assert row["calls"] == 3 and row["mean_s"] > 0
        assert row["reference_s"] == cli.REFERENCE_PLAN_TIME_S[name]
    assert report["results"]["ddpg"]["mean_s"] < report["results"]["critic_pi2"]["mean_s"]
    assert cli.main(["benchmark", *FAST, "--calls", "2", "--out", str(tmp_path)]) == 0
    assert "speedup" in (tmp_path / "benchmark.txt").read_text()
    assert json.loads((tmp_path / "benchmark.json").read_text())["results"]["mpc"]["calls"] == 2


def test_benchmark_rejects_zero_calls(tmp_path):
    assert cli.main(["benchmark", "--calls", "0", "--out", str(tmp_path)]) == 1


def test_ablation_diffs_touch_only_their_switch():
    base = ExperimentConfig()
    full = cli.ablation_config(base, "full", 0)
    assert set(cli.config_diff(full, cli.ablation_config(base, "no_greedy", 0))) == {"greedy"}
    assert set(cli.config_diff(full, cli.ablation_config(base, "no_critic", 0))) == {"return_mode", "H"}
    assert set(cli.config_diff(full, cli.ablation_config(base, "no_actor_training", 0))) == {"actor_training"}


def test_ablation_run(tmp_path):
    args = ["ablation", *FAST, "--set", "training.episodes=1", "--seeds", "0,1", "--out", str(tmp_path)]
    assert cli.main(args) == 0
    comparison = json.loads((tmp_path / "comparison.json").read_text())
    assert set(comparison["ranking"]) == set(cli.ABLATIONS)
    for variant in cli.ABLATIONS:
        assert (tmp_path / variant / "seed_1" / "results.csv").exists()
        assert len(comparison["variants"][variant]["final_returns"]) == 2


def test_ablation_rejects_other_agents(tmp_path):
    assert cli.main(["ablation", "--set", 'agent="ddpg"', "--out", str(tmp_path)]) == 1
