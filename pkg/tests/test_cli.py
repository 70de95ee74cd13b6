import json
import os

import numpy as np
import pytest

from scoff.cli import ConfigError, main, parse_config, to_train_config


def run_cli(*argv):
    return main(list(argv))


def write_cfg(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


# ------------------------------------------------------------- config parsing

def test_empty_file_plus_task_gives_full_defaults(tmp_path):
    path = write_cfg(tmp_path, "")
    resolved = parse_config(path, ["task=switching"])
    assert resolved["task"] == "switching"
    assert resolved["n_f"] == 6
    assert resolved["n_s"] == 4
    assert resolved["lr"] == 1e-4
    assert resolved["beta1"] == 0.9
    cfg = to_train_config(resolved)
    assert cfg.scoff.n_f == 6 and cfg.scoff.n_s == 4


def test_adding_lr_default():
    resolved = parse_config(None, ["task=adding"])
    assert resolved["lr"] == 1e-2


def test_override_wins_over_file(tmp_path):
    path = write_cfg(tmp_path, "[model]\nn_s = 6\n")
    resolved = parse_config(path, ["n_s=2"])
    assert resolved["n_s"] == 2


def test_misspelled_key_named_in_error(tmp_path):
    path = write_cfg(tmp_path, "nf = 4\n")
    with pytest.raises(ConfigError, match="'nf'"):
        parse_config(path)


def test_file_error_carries_line_number(tmp_path):
    path = write_cfg(tmp_path, "# comment\nn_f = 4\nbogus_key = 1\n")
    with pytest.raises(ConfigError, match=":3"):
        parse_config(path)


def test_malformed_value_rejected(tmp_path):
    path = write_cfg(tmp_path, "n_f = many\n")
    with pytest.raises(ConfigError, match="malformed"):
        parse_config(path)


def test_sections_and_comments_ignored(tmp_path):
    path = write_cfg(tmp_path, "[model]\nn_f = 3  # inline comment\n[train]\nepochs = 2\n")
    resolved = parse_config(path)
    assert resolved["n_f"] == 3
    assert resolved["epochs"] == 2


def test_bad_override_format():
    with pytest.raises(ConfigError):
        parse_config(None, ["n_f"])


def test_seed_flag_overrides():
    resolved = parse_config(None, [], seed=99)
    assert resolved["seed"] == 99


def test_comm_values_must_match_d_h():
    with pytest.raises(ConfigError, match="comm_values"):
        parse_config(None, ["comm_values=16", "d_h=32"])
    resolved = parse_config(None, ["comm_values=32", "d_h=32"])
    assert resolved["comm_values"] == 32


def test_unknown_task_and_model():
    with pytest.raises(ConfigError):
        parse_config(None, ["task=pong"])
    with pytest.raises(ConfigError):
        parse_config(None, ["model=transformer"])


# ------------------------------------------------------------------- commands

def test_param_count_bouncing_defaults(tmp_path, capsys):
    code = run_cli("param-count", "--config", "configs/bouncing_paper.cfg")
    out = capsys.readouterr().out
    assert code == 0
    assert "241200" in out
    assert "601200" in out
    assert "0.40" in out


def test_check_grad_default_config_passes(capsys):
    code = run_cli("check-grad")
    out = capsys.readouterr().out
    assert code == 0
    assert "gradient error" in out


def test_gen_data_byte_identical(tmp_path):
    out1 = str(tmp_path / "a")
    out2 = str(tmp_path / "b")
    args = ["gen-data", "--set", "task=switching", "--set", "train_count=5",
            "--set", "test_count=3", "--set", "length=13", "--seed", "5"]
    assert run_cli(*args, "--out", out1) == 0
    assert run_cli(*args, "--out", out2) == 0
    for name in ("train.scfd", "test.scfd", "resolved_config.cfg"):
        a = (tmp_path / "a" / name).read_bytes()
        b = (tmp_path / "b" / name).read_bytes()
        assert a == b, name


def _gen_and_train(tmp_path, extra_train=()):
    data_dir = str(tmp_path / "data")
    assert run_cli("gen-data", "--set", "task=switching",
                   "--set", "train_count=6", "--set", "test_count=4",
                   "--set", "length=13", "--seed", "3", "--out", data_dir) == 0
    run_dir = str(tmp_path / "run")
    args = ["train", "--set", "task=switching", "--set", f"data={data_dir}",
            "--set", "n_f=2", "--set", "n_s=2", "--set", "d_h=8",
            "--set", "inp_keys=4", "--set", "inp_values=8",
            "--set", "sel_keys=4", "--set", "comm_heads=1",
            "--set", "comm_keys=4", "--set", "epochs=1",
            "--set", "batch_size=3", "--set", "burn_in=3",
            "--set", "horizon=5", "--set", "eval_subset=2",
            "--set", "lr=0.001", "--seed", "11", "--out", run_dir]
    assert run_cli(*args, *extra_train) == 0
    return data_dir, run_dir, args


def test_train_eval_trace_pipeline(tmp_path, capsys):
    data_dir, run_dir, _ = _gen_and_train(tmp_path)
    capsys.readouterr()

    assert os.path.exists(os.path.join(run_dir, "metrics.jsonl"))
    assert os.path.exists(os.path.join(run_dir, "checkpoint", "manifest.json"))
    assert os.path.exists(os.path.join(run_dir, "resolved_config.cfg"))
    with open(os.path.join(run_dir, "metrics.jsonl")) as f:
        records = [json.loads(line) for line in f]
    assert len(records) == 1
    assert "train_loss" in records[0]
    assert "wall" not in json.dumps(records[0])  # reproducible artifact

    eval_dir = str(tmp_path / "eval")
    assert run_cli("eval", "--set", f"data={data_dir}",
                   "--set", f"checkpoint={os.path.join(run_dir, 'checkpoint')}",
                   "--out", eval_dir) == 0
    lines = open(os.path.join(eval_dir, "rollout_curve.csv")).read().splitlines()
    assert lines[0] == "step,teacher_forced,self_fed"
    assert len(lines) == 1 + 5  # header + horizon rows

    trace_dir = str(tmp_path / "trace")
    assert run_cli("trace", "--set", f"data={data_dir}",
                   "--set", f"checkpoint={os.path.join(run_dir, 'checkpoint')}",
                   "--out", trace_dir) == 0
    trace_lines = open(os.path.join(trace_dir, "traces.jsonl")).read().splitlines()
    assert len(trace_lines) == 12  # length 13 sequence -> 12 prediction steps
    rec = json.loads(trace_lines[0])
    assert set(rec) == {"t", "active", "schema", "input_weights", "comm_weights"}
    assert len(rec["active"]) == 2
    assert len(rec["input_weights"]) == 2      # n_f rows
    assert len(rec["input_weights"][0]) == 16  # P columns
    usage = open(os.path.join(trace_dir, "schema_usage.csv")).read().splitlines()
    assert len(usage) == 2                     # n_f rows
    assert len(usage[0].split(",")) == 2       # n_s columns


def test_train_reruns_byte_identical(tmp_path, capsys):
    _, run_dir, args = _gen_and_train(tmp_path)
    first = open(os.path.join(run_dir, "metrics.jsonl"), "rb").read()
    first_ck = open(os.path.join(run_dir, "checkpoint", "tensors.bin"), "rb").read()
    capsys.readouterr()
    assert run_cli(*args) == 0
    second = open(os.path.join(run_dir, "metrics.jsonl"), "rb").read()
    second_ck = open(os.path.join(run_dir, "checkpoint", "tensors.bin"), "rb").read()
    assert first == second
    assert first_ck == second_ck


# ------------------------------------------------------------------ exit codes

def test_usage_error_exit_code(capsys):
    assert run_cli("train", "--set", "bogus=1") == 1
    assert "usage error" in capsys.readouterr().err


def test_unknown_command_exit_code(capsys):
    assert run_cli("explode") == 1


def test_missing_data_exit_code(tmp_path, capsys):
    assert run_cli("train", "--set", "data=/nonexistent/dir",
                   "--out", str(tmp_path / "x")) == 2
    assert "error" in capsys.readouterr().err


def test_missing_required_key_names_it(capsys):
    assert run_cli("train") == 1
    assert "data" in capsys.readouterr().err
