"""Deterministic evaluation of trained checkpoints."""
from __future__ import annotations

import numpy as np

from ..diffnet import MLP, ConfigError
from ..envs import CAUSES, FEATURE_SCALE, CourseEnv, write_trajectory
from ..intrinsic import diayn_reward, metra_reward, rnd_bonus
from ..policy import GaussianPolicy
from .config import ExperimentConfig
from .train import load_checkpoint


def _load(source):
    return load_checkpoint(source) if isinstance(source, str) else source


def checkpoint_parts(source, task=None):
    """``(config, env_config, policy)`` from a checkpoint path or dict.

    Passing ``task`` checks that the checkpoint was trained on that course.
    """
    ckpt = _load(source)
    cfg = ExperimentConfig.from_dict(ckpt["config"])
    if task is not None and task != cfg.task:
        raise ConfigError(f"checkpoint was trained on {cfg.task!r}, not {task!r}")
    return cfg, cfg.env_config(), GaussianPolicy.from_state(ckpt["policy"])


def diversity_scorer(ckpt, cfg):
    """r_div(f, f_next, z) rebuilt from the stored skill-reward networks, or ``None``."""
    d = ckpt.get("intrinsic")
    if not d:
        return None
    scale = cfg.feature_scale if cfg.feature_scale is not None else FEATURE_SCALE[cfg.task]
    if d["kind"] == "metra":
        phi = MLP.from_dict(d["phi"])
        return lambda f, fn, z: metra_reward(phi, scale * f, scale * fn, z)
    if d["kind"] == "diayn":
        disc = MLP.from_dict(d["disc"])
        return lambda f, fn, z: diayn_reward(disc, scale * fn, z)
    holder = type("RndNets", (), {})()
    holder.target, holder.predictor = MLP.from_dict(d["target"]), MLP.from_dict(d["predictor"])
    return lambda f, fn, z: d["scale"] * rnd_bonus(holder, scale * fn)


def policy_actor(policy):
    def act(obs_state, z):
        return policy.act(obs_state, z, None, deterministic=True)[0]
    return act


def run_episodes(act, env_cfg, skills, max_steps=None):
    """Roll every skill row to termination with a deterministic actor.

    Returns obstacles passed, task return and termination cause per episode.
    """
    skills = np.atleast_2d(np.asarray(skills, dtype=np.float64))
    n = skills.shape[0]
    env = CourseEnv(env_cfg, n, skills.shape[1])
    env.reset(np.random.default_rng(0), skills)
    alive = np.ones(n, dtype=bool)
    passed = np.zeros(n, dtype=np.int64)
    ret = np.zeros(n)
    cause = np.zeros(n, dtype=np.int64)
    for _ in range(max_steps or env_cfg.timeout):
        _, r, done, info = env.step(act(env.obs_state(), env.skills))
        ret[alive] += r[alive]
        ended = alive & done
        passed[ended] = info["obstacles_passed"][ended]
        cause[ended] = info["cause"][ended]
        alive &= ~done
        if not alive.any():
            break
    passed[alive] = env.obstacles_passed()[alive]
    return passed, ret, cause


def collapse_ratios(act, env_cfg, skill_dim=1, n_skills=100, n_repeats=10, seed=0, min_obstacles=1):
    """Success percentage for each repeat of ``n_skills`` prior samples."""
    rng = np.random.default_rng(seed)
    ratios = []
    for _ in range(n_repeats):
        z = rng.standard_normal((n_skills, skill_dim))
        passed, _, _ = run_episodes(act, env_cfg, z)
        ratios.append(100.0 * float(np.mean(passed >= min_obstacles)))
    return np.array(ratios)


def evaluate_positive_collapse(source, n_skills=100, n_repeats=10, seed=0, task=None):
    """Mean and sample std (over repeats) of the skill success percentage."""
    cfg, env_cfg, policy = checkpoint_parts(source, task)
    ratios = collapse_ratios(policy_actor(policy), env_cfg, cfg.skill_dim, n_skills, n_repeats, seed,
                             cfg.success_min_obstacles)
    std = float(np.std(ratios, ddof=1)) if len(ratios) > 1 else 0.0
    return {"mean": float(ratios.mean()), "std": std, "ratios": ratios.tolist(),
            "n_skills": n_skills, "n_repeats": n_repeats}


def evaluate_rollout(source, z=None, seed=0, trajectory_path=None, task=None):
    """One deterministic episode for skill ``z`` (``None`` or ``"random"`` samples one)."""
    ckpt = _load(source)
    cfg, env_cfg, policy = checkpoint_parts(ckpt, task)
    score = diversity_scorer(ckpt, cfg)
    if z is None or (isinstance(z, str) and z == "random"):
        z = np.random.default_rng(seed).standard_normal(cfg.skill_dim)
    z = np.asarray(z, dtype=np.float64).reshape(1, cfg.skill_dim)
    env = CourseEnv(env_cfg, 1, cfg.skill_dim)
    env.reset(np.random.default_rng(seed), z)
    rows, ret, cause = [], 0.0, 0
    info = {"obstacles_passed": env.obstacles_passed()}
    for t in range(env_cfg.timeout):
        a = policy.act(env.obs_state(), z, None, deterministic=True)[0]
        f = env.features()
        _, r, done, info = env.step(a)
        r_div = float(np.ravel(score(f, env.features(), z))[0]) if score else 0.0
        ret += float(r[0])
        rows.append({"t": t, "x": env.x[0], "z": env.z[0], "vx": env.vx[0], "vz": env.vz[0],
                     "body_angle": env.angle[0], "r_task": float(r[0]), "r_div": r_div, "done": int(done[0])})
        if done[0]:
            cause = int(info["cause"][0])
            break
    if trajectory_path:
        write_trajectory(rows, trajectory_path)
    return {"z": z[0].tolist(), "obstacles_passed": int(info["obstacles_passed"][0]),
            "episode_return": ret, "termination": CAUSES[cause], "steps": len(rows),
            "trajectory": rows}
