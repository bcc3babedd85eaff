import json

import numpy as np
import pytest

from sdax import cli
from sdax.diffnet import ConfigError
from sdax.envs import default_course
from sdax.harness.config import ExperimentConfig, load_config, load_defaults, parse_override
from sdax.harness.evaluate import (collapse_ratios, evaluate_positive_collapse, evaluate_rollout,
                                   policy_actor)
from sdax.harness.plot import group_runs, plot
from sdax.harness.train import METRICS_HEADER, Trainer, TrainingFault, load_checkpoint, read_metrics, train
from sdax.policy import GaussianPolicy, NumericalFault


def small(**kw):
    return load_config(overrides={"num_envs": 8, "iterations": 4, "checkpoint_every": 2, **kw})


def test_defaults_file_matches_dataclass_and_published_values():
    shipped = load_defaults()
    assert ExperimentConfig.from_dict(shipped).to_dict() == ExperimentConfig().to_dict()
    assert shipped["lambda_init"] == 10.0 and shipped["metra"]["kappa"] == 30.0
    assert shipped["ppo"]["horizon"] == 24 and shipped["ppo"]["lr"] == 5e-4
    assert shipped["checkpoint_every"] == 500


def test_overrides_and_validation():
    assert parse_override("ppo.lr=0.001") == {"ppo": {"lr": 0.001}}
    assert parse_override("method=task-only") == {"method": "task-only"}
    cfg = load_config(overrides=parse_override("ppo.lr=0.001"))
    assert cfg.ppo["lr"] == 0.001 and cfg.ppo["clip"] == 0.2
    for bad in ({"method": "x"}, {"task": "swim"}, {"lambda_mode": "auto"}, {"ppo": {"lrr": 1}},
                {"env": {"h_min": 0.9}}, {"bogus": 1}, {"lambda_mode": "fixed", "lambda_fixed": -1}):
        with pytest.raises(ConfigError):
            load_config(overrides=bad)
    with pytest.raises(ConfigError):
        parse_override("novalue")
    with pytest.raises(ConfigError):
        load_config("/nonexistent.json")


def test_effective_lambda_rules():
    assert small(method="task-only").effective_lambda() == ("fixed", 0.0)
    assert small(method="div-only").effective_lambda() == ("fixed", 1.0)
    assert small(lambda_mode="fixed", lambda_fixed=0.1).effective_lambda() == ("fixed", 0.1)
    assert small().effective_lambda() == ("adaptive", 10.0)


def test_update_order_is_collect_intrinsic_ppo_lambda():
    tr = Trainer(small(), 0)
    row = tr.step()
    assert tr.phase_log == ["collect", "intrinsic", "ppo", "lambda"]
    assert set(row) == set(METRICS_HEADER)
    # the recorded kappa and lambda are the post-update values of this iteration
    assert row["kappa"] == tr.intrinsic.kappa and row["lambda"] == tr.lam.value
    tr_base = Trainer(small(method="task-only"), 0)
    tr_base.step()
    assert tr_base.phase_log == ["collect", "ppo", "lambda"]


def test_adaptive_lambda_starts_at_ten_and_moves():
    tr = Trainer(small(), 0)
    rows = [tr.step() for _ in range(3)]
    assert tr.lam.history[0] == pytest.approx(10.0 + 1e-2 * rows[0]["meta_grad"])
    assert rows[0]["meta_grad"] != 0.0


def test_metrics_are_bitwise_reproducible(tmp_path):
    for name in ("a", "b"):
        Trainer(small(), 3).run(tmp_path / f"{name}.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    meta, cols = read_metrics(tmp_path / "a.csv")
    assert meta == {"task": "crawl", "method": "sdax-metra", "lambda": "adaptive:10.0", "seed": "3"}
    assert list(cols["iteration"]) == [0, 1, 2, 3]


def test_fixed_zero_lambda_equals_task_only(tmp_path):
    a = Trainer(small(lambda_mode="fixed", lambda_fixed=0.0), 1)
    b = Trainer(small(method="task-only"), 1)
    ra, rb = [a.step() for _ in range(3)], [b.step() for _ in range(3)]
    assert np.array_equal(a.policy.params, b.policy.params)
    for key in ("mean_r_task", "surrogate", "loss_task", "obstacles_passed", "episode_return_task"):
        assert [r[key] for r in ra] == [r[key] for r in rb]


def test_checkpoints_and_round_trip(tmp_path):
    cfg = small(task="leap")
    res = train(cfg, str(tmp_path), seeds=[0])
    metrics, final = res[0]
    run_dir = tmp_path / cfg.run_name(0)
    assert sorted(p.name for p in run_dir.iterdir()) == ["ckpt_000002.json", "ckpt_000004.json", "final.json"]
    ck = load_checkpoint(str(final))
    assert ck["iteration"] == 4 and ck["lambda"]["value"] > 0
    first = evaluate_rollout(str(final), z=[0.3])
    again = evaluate_rollout(ck, z=[0.3])
    assert first["trajectory"] == again["trajectory"]
    restored = Trainer.restore(ck)
    assert np.array_equal(restored.policy.params, ck["policy"]["params"])
    assert restored.lam.value == ck["lambda"]["value"] and restored.iteration == 4
    assert restored.intrinsic.kappa == ck["intrinsic"]["kappa"]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"format": "x"}))
    with pytest.raises(ValueError):
        load_checkpoint(str(path))


def test_rollout_summary_and_trajectory_file(tmp_path):
    tr = Trainer(small(), 0)
    ck = tr.checkpoint()
    out = evaluate_rollout(ck, z=0.0, trajectory_path=str(tmp_path / "t.csv"))
    assert out["termination"] == "timeout" and out["steps"] == 500 and out["obstacles_passed"] == 0
    assert (tmp_path / "t.csv").read_text().count("\n") == 501
    rnd = evaluate_rollout(ck, z="random", seed=4)
    assert rnd["z"] == evaluate_rollout(ck, z="random", seed=4)["z"]
    with pytest.raises(ConfigError):
        evaluate_rollout(ck, task="leap")


def test_collapse_on_untrained_policy_is_zero():
    ck = Trainer(small(task="leap"), 0).checkpoint()
    res = evaluate_positive_collapse(ck, n_skills=20, n_repeats=3)
    assert res["mean"] == 0.0 and res["std"] == 0.0 and len(res["ratios"]) == 3
    with pytest.raises(ConfigError):
        evaluate_positive_collapse(ck, task="crawl")


def test_collapse_of_scripted_successful_controller_is_full():
    def crawler(obs, z):
        return np.tile([1.0, -1.0, -1.0, 0.0], (len(obs), 1))
    ratios = collapse_ratios(crawler, default_course("crawl"), n_skills=100, n_repeats=10)
    assert len(ratios) == 10 and np.all(ratios == 100.0)


def test_collapse_std_is_sample_std_over_repeats():
    # half the skills succeed: a skill-gated version of the scripted crawler
    def gated(obs, z):
        a = np.tile([1.0, -1.0, -1.0, 0.0], (len(obs), 1))
        a[z[:, 0] < 0, 2] = 0.0
        return a
    ratios = collapse_ratios(gated, default_course("crawl"), n_skills=50, n_repeats=4, seed=2)
    assert 20 < ratios.mean() < 80 and np.all((ratios >= 0) & (ratios <= 100))


def test_policy_actor_is_deterministic():
    pol = GaussianPolicy(15, 1, 4, rng=np.random.default_rng(0))
    act = policy_actor(pol)
    s, z = np.ones((2, 15)), np.ones((2, 1))
    assert np.array_equal(act(s, z), act(s, z))


def test_stop_at_obstacles_and_fault_checkpoint(tmp_path, monkeypatch):
    tr = Trainer(small(stop_at_obstacles=0.0), 0)
    assert len(tr.run(iterations=10)) == 1

    def boom(self):
        raise NumericalFault("nan")
    tr = Trainer(small(), 0)
    monkeypatch.setattr(Trainer, "step", boom)
    with pytest.raises(TrainingFault):
        tr.run(checkpoint_dir=str(tmp_path))
    assert (tmp_path / "fault_0.json").exists()


def test_plot_bands(tmp_path):
    paths = []
    for seed in range(3):
        p = tmp_path / f"m{seed}.csv"
        Trainer(small(), seed).run(p)
        paths.append(str(p))
    groups = group_runs(paths)
    (it, mean, std, n), = groups.values()
    stack = np.stack([read_metrics(p)[1]["obstacles_passed"] for p in paths])
    assert n == 3 and np.allclose(std, stack.std(0, ddof=1)) and np.allclose(mean, stack.mean(0))
    single = group_runs(paths[:1], "lambda")
    (_, lam, lam_std, _), = single.values()
    assert not lam_std.any() and lam[0] == pytest.approx(10.0, abs=0.1)
    out = plot(paths, str(tmp_path / "fig"))
    assert open(out["curves"]).read().lstrip().startswith("<?xml") and out["lambda"].endswith(".svg")
    with pytest.raises(ConfigError):
        plot([])


def test_cli_verbs_and_exit_codes(tmp_path, capsys, monkeypatch):
    out = str(tmp_path / "runs")
    assert cli.main(["train", "--set", "num_envs=4", "--set", "iterations=2", "--out", out]) == 0
    ckpt = f"{out}/crawl_sdax-metra_adaptive_s0/final.json"
    assert cli.main(["eval", ckpt, "--z", "0.2", "--trajectory", str(tmp_path / "t.csv")]) == 0
    assert cli.main(["collapse", ckpt, "--skills", "5", "--repeats", "2"]) == 0
    assert cli.main(["plot", f"{out}/crawl_sdax-metra_adaptive_s0.csv", "--out", str(tmp_path / "p")]) == 0
    capsys.readouterr()
    assert cli.main(["inspect-config", "--set", "task=leap"]) == 0
    printed = capsys.readouterr().out
    assert json.loads(printed)["task"] == "leap"
    # the printed config loads back unchanged
    (tmp_path / "c.json").write_text(printed)
    assert cli.main(["inspect-config", "--config", str(tmp_path / "c.json")]) == 0
    assert capsys.readouterr().out == printed
    assert cli.main(["inspect-config", "--resolved", "--set", "task=leap"]) == 0
    assert json.loads(capsys.readouterr().out)["env"]["jump_min_fraction"] == 1.0
    assert cli.main(["inspect-config", "--set", "method=nope"]) == cli.EXIT_CONFIG
    assert cli.main(["collapse", ckpt, "--task", "leap"]) == cli.EXIT_CONFIG
    assert cli.main(["plot"]) == cli.EXIT_CONFIG

    def boom(self):
        raise NumericalFault("nan")
    monkeypatch.setattr(Trainer, "step", boom)
    assert cli.main(["train", "--set", "num_envs=4", "--set", "iterations=2", "--out", out]) == cli.EXIT_FAULT
