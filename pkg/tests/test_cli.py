import json

import pytest

from firedrone.bench import bundled_scenarios
from firedrone.cli import EXIT_FAULT, EXIT_USAGE, main


def test_no_command_is_usage_error(capsys):
    assert main([]) == EXIT_USAGE
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand(capsys):
    assert main(["fly"]) == EXIT_USAGE
    assert "usage" in capsys.readouterr().err


def test_bad_option_is_usage_error(capsys):
    assert main(["gen-data", "--envs", "many"]) == EXIT_USAGE


def test_missing_bench_config(capsys, tmp_path):
    missing = tmp_path / "missing.json"
    assert main(["bench", "--config", str(missing)]) == EXIT_FAULT
    assert str(missing) in capsys.readouterr().err


def test_seed_accepted_everywhere():
    from firedrone.cli import build_parser

    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, p in sub.choices.items():
        assert any("--seed" in a.option_strings for a in p._actions), name


def test_gen_data_is_reproducible(tmp_path, capsys):
    for d in ("a", "b"):
        assert main(["gen-data", "--size", "20", "--envs", "2", "--horizon", "3", "--seed", "7",
                     "--out", str(tmp_path / d)]) == 0
    for name in ("s_pairs.jsonl", "sq_pairs.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_train_and_eval(tmp_path, capsys):
    data, models = tmp_path / "data", tmp_path / "models"
    assert main(["gen-data", "--size", "12", "--envs", "3", "--horizon", "4", "--out", str(data)]) == 0
    assert main(["train", "--data", str(data), "--epochs", "1", "--hidden", "8", "--out", str(models)]) == 0
    assert (models / "s.icnn").exists() and (models / "sq.icnn").exists()
    capsys.readouterr()
    assert main(["eval-predictor", "--model", str(models / "sq.icnn"), "--data", str(data / "sq_pairs.jsonl")]) == 0
    out = capsys.readouterr().out
    for name in ("sensitivity", "specificity", "precision", "accuracy"):
        assert name in out


def test_eval_missing_model(tmp_path, capsys):
    assert main(["eval-predictor", "--model", str(tmp_path / "x.icnn"), "--data", "d.jsonl"]) == EXIT_FAULT
    assert "x.icnn" in capsys.readouterr().err


def test_plan_rollout_render(tmp_path, tiny_models, capsys):
    scen = str(bundled_scenarios()[0])
    assert main(["plan", "--scenario", scen, "--planner", "ga", "--models", str(tiny_models)]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert {"b", "assignments", "value", "feasible"} <= set(rec)
    trace = tmp_path / "ep.jsonl"
    assert main(["rollout", "--scenario", scen, "--planner", "mip_ccro", "--models", str(tiny_models),
                 "--horizon", "2", "--out", str(trace)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["periods"] >= 1
    assert main(["render", "--trace", str(trace), "--out", str(tmp_path / "img")]) == 0
    assert (tmp_path / "img" / "paths" / "ep.svg").exists()


def test_bench_command(tmp_path, tiny_models, capsys):
    cfg = tmp_path / "bench.json"
    cfg.write_text(json.dumps({
        "scenarios": ["bundled:forest_a"], "horizon": 2, "planners": ["ga"], "seeds": [0],
        "output": "out", "s_model": str(tiny_models / "s.icnn"), "sq_model": str(tiny_models / "sq.icnn"),
        "ga": {"population": 8, "generations": 3}, "images": False,
    }))
    assert main(["bench", "--config", str(cfg), "--seeds", "4"]) == 0
    assert "forest_a" in capsys.readouterr().out
    text = (tmp_path / "out" / "report.csv").read_text()
    assert text.count("\n") == 2 and ",4," in text
