"""CLI behavior: exit codes, config validation, artifact layout."""

import numpy as np
import pytest

from batchsim.cli import main
from batchsim.ppo import PPO, PPOConfig


def run(argv):
    return main(argv)


def test_train_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "run"
    code = run(["train", "--env", "cartpole", "--num-envs", "8",
                "--seed", "1", "--iterations", "2", "--horizon", "4",
                "--workers", "1", "--out", str(out)])
    assert code == 0
    assert (out / "metrics.csv").exists()
    assert (out / "checkpoint.bin").exists()
    header = (out / "metrics.csv").read_text().splitlines()[0]
    assert header.split(",")[:3] == ["iteration", "env_steps", "mean_reward"]


def test_unknown_config_key_exit_2(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("env:\n  num_env: 4\n")
    code = run(["train", "--env", "cartpole", "--num-envs", "4",
                "--workers", "1", "--config", str(cfg),
                "--out", str(tmp_path / "r")])
    assert code == 2
    assert "num_env" in capsys.readouterr().err


def test_unknown_ppo_key_exit_2(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("ppo:\n  learning_rate: 0.1\n")
    code = run(["train", "--env", "cartpole", "--num-envs", "4",
                "--workers", "1", "--config", str(cfg),
                "--out", str(tmp_path / "r")])
    assert code == 2
    assert "learning_rate" in capsys.readouterr().err


def test_config_sections_applied(tmp_path):
    cfg = tmp_path / "ok.yaml"
    cfg.write_text(
        "env:\n  episode_length: 7\n"
        "ppo:\n  lr: 0.001\n  hidden: [8]\n")
    out = tmp_path / "run"
    code = run(["train", "--env", "cartpole", "--num-envs", "4",
                "--seed", "0", "--iterations", "1", "--horizon", "2",
                "--workers", "1", "--config", str(cfg), "--out", str(out)])
    assert code == 0


def test_bench_csv_columns(tmp_path):
    out = tmp_path / "bench.csv"
    code = run(["bench", "--env", "cartpole", "--num-envs", "4,8",
                "--base-horizon", "8", "--warmup", "1",
                "--workers", "1", "--out", str(out)])
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == ("num_envs,horizon,control_steps_per_sec,"
                        "sim_steps_per_sec,wall_clock_s")
    rows = [line.split(",") for line in lines[1:]]
    assert [r[0] for r in rows] == ["4", "8"]
    # constant experience: num_envs * horizon is constant
    assert int(rows[0][0]) * int(rows[0][1]) == \
        int(rows[1][0]) * int(rows[1][1])
    # sim fps = control fps * decimation (cartpole decimates by 2)
    for r in rows:
        assert abs(float(r[3]) - 2 * float(r[2])) < 1e-6 * float(r[3])


def test_bench_horizon_floor():
    from batchsim.cli import _parse_env_counts
    counts = _parse_env_counts("2,64")
    base = 4
    n_min = min(counts)
    horizons = [max(1, (base * n_min) // n) for n in counts]
    assert horizons == [4, 1]


def test_bench_bad_count_list(capsys):
    code = run(["bench", "--env", "cartpole", "--num-envs", "4,x",
                "--workers", "1"])
    assert code == 2


def test_eval_roundtrip(tmp_path, capsys):
    out = tmp_path / "run"
    assert run(["train", "--env", "cartpole", "--num-envs", "8",
                "--iterations", "2", "--horizon", "4",
                "--workers", "1", "--out", str(out)]) == 0
    code = run(["eval", "--env", "cartpole", "--num-envs", "4",
                "--workers", "1", "--checkpoint",
                str(out / "checkpoint.bin"), "--episodes", "2"])
    assert code == 0
    assert "mean return" in capsys.readouterr().out


def test_eval_zero_episodes_exit_2(tmp_path, capsys):
    ck = tmp_path / "ck.bin"
    PPO(4, 1, PPOConfig(hidden=(8,))).save(ck)
    code = run(["eval", "--env", "cartpole", "--num-envs", "4",
                "--workers", "1", "--checkpoint", str(ck),
                "--episodes", "0"])
    assert code == 2


def test_eval_digest_mismatch_exit_2(tmp_path, capsys):
    ck = tmp_path / "ck.bin"
    PPO(7, 3, PPOConfig(hidden=(8,))).save(ck)  # wrong architecture
    code = run(["eval", "--env", "cartpole", "--num-envs", "4",
                "--workers", "1", "--checkpoint", str(ck),
                "--episodes", "1"])
    assert code == 2
    assert "checkpoint" in capsys.readouterr().err
