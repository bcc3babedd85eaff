"""Training loop: collect, update the skill reward, PPO, then lambda."""
from __future__ import annotations

import csv
import json
import logging
import os
from collections import deque

import numpy as np

from .. import bilevel
from ..bilevel import LambdaState
from ..envs import ACTION_DIM, FEATURE_SCALE, CourseEnv, inject_observation_noise
from ..intrinsic import make_intrinsic
from ..policy import GaussianPolicy, NumericalFault, sample_skills
from ..ppo import Critic, PpoLearner, RolloutBatch, gae
from .config import ExperimentConfig

log = logging.getLogger(__name__)

METRICS_VERSION = 1
METRICS_HEADER = (
    "iteration", "mean_r_task", "mean_r_div", "lambda", "meta_grad", "surrogate", "loss_task",
    "loss_div", "entropy", "kappa", "violation", "obstacles_passed", "success_rate",
    "episode_return_task", "episode_return_div", "episodes",
)
CHECKPOINT_FORMAT = "sdax-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingFault(RuntimeError):
    """A module produced non-finite values; the run was checkpointed and halted."""


def make_rngs(seed):
    names = ("init", "env", "act", "ppo", "skill", "intrinsic", "noise")
    seqs = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.Generator(np.random.PCG64(s)) for n, s in zip(names, seqs)}


class Trainer:
    """One seeded run of one (task, method) configuration.

    ``phase_log`` records the order of update phases within the latest
    iteration, so the collection -> skill reward -> PPO -> lambda ordering
    can be audited.
    """

    def __init__(self, config: ExperimentConfig, seed: int):
        self.cfg = config.validate()
        self.seed = seed
        self.rng = make_rngs(seed)
        self.env_cfg = config.env_config()
        self.env = CourseEnv(self.env_cfg, config.num_envs, config.skill_dim)
        obs_dim = self.env.obs_dim
        scale = config.feature_scale if config.feature_scale is not None else FEATURE_SCALE[config.task]
        self.feat_scale = float(scale)
        k = config.skill_dim
        self.policy = GaussianPolicy(obs_dim, k, ACTION_DIM, config.policy_hidden, "elu", rng=self.rng["init"])
        self.v_task = Critic(obs_dim, k, config.critic_hidden, "elu", rng=self.rng["init"])
        self.v_div = Critic(obs_dim, k, config.critic_hidden, "elu", rng=self.rng["init"])
        self.learner = PpoLearner(self.policy, self.v_task, self.v_div, config.ppo_config())
        kind = config.intrinsic
        self.intrinsic = None
        if kind is not None:
            kwargs = dict(getattr(config, kind))
            if kind != "rnd":
                kwargs["hidden"] = tuple(config.phi_hidden)
                self.intrinsic = make_intrinsic(kind, self._feat_dim(), k, self.rng["intrinsic"], **kwargs)
            else:
                self.intrinsic = make_intrinsic(kind, self._feat_dim(), k, self.rng["intrinsic"],
                                                hidden=tuple(config.phi_hidden), **kwargs)
        mode, lam0 = config.effective_lambda()
        lo, hi = config.lambda_bounds
        self.lam = LambdaState(value=lam0, step_size=config.lambda_step, lo=lo, hi=hi,
                               fixed=(mode == "fixed"))
        self.iteration = 0
        self.phase_log = []
        self.rows = []
        self.recent = deque(maxlen=config.num_envs)
        self.ep_ret_task = np.zeros(config.num_envs)
        self.ep_ret_div = np.zeros(config.num_envs)
        self.env.reset(self.rng["env"], skills=self._sample_skills(config.num_envs))

    def _feat_dim(self):
        return self.env.features().shape[1]

    def features(self):
        return self.feat_scale * self.env.features()

    def _sample_skills(self, n):
        return sample_skills(self.rng["skill"], n, self.cfg.skill_dim)

    def _policy_obs(self, obs_state):
        if self.cfg.observation_noise:
            return inject_observation_noise(obs_state, self.cfg.observation_noise, self.rng["noise"])
        return obs_state

    # ------------------------------------------------------------ collection
    def collect(self):
        cfg, env = self.cfg, self.env
        T, N = cfg.ppo["horizon"], cfg.num_envs
        gamma = cfg.ppo["gamma"]
        buf = {k: [] for k in ("obs", "z", "a", "logp", "r_task", "r_div", "done", "v_task", "v_div",
                               "f", "f_next")}
        finished = []
        for _ in range(T):
            s = self._policy_obs(env.obs_state())
            z = env.skills.copy()
            a, logp = self.policy.act(s, z, self.rng["act"])
            f = self.features()
            v_t, v_d = self.v_task(s, z), self.v_div(s, z)
            _, r_env, done, info = env.step(a)
            if np.any(info["cause"] == 6):
                raise NumericalFault("simulator produced non-finite state")
            f_next = self.features()
            r_task = np.zeros(N) if cfg.method == "div-only" else r_env
            r_div = self.intrinsic.reward(f, f_next, z) if self.intrinsic is not None else np.zeros(N)
            timeout = info["timeout"]
            if timeout.any():
                # bootstrap truncated episodes through the reward
                s_end = self._policy_obs(env.obs_state())
                r_task = r_task + gamma * timeout * self.v_task(s_end, z)
                r_div = r_div + gamma * timeout * self.v_div(s_end, z)
            self.ep_ret_task += r_env
            self.ep_ret_div += r_div
            for key, val in (("obs", s), ("z", z), ("a", a), ("logp", logp), ("r_task", r_task),
                             ("r_div", r_div), ("done", done.astype(np.float64)), ("v_task", v_t),
                             ("v_div", v_d), ("f", f), ("f_next", f_next)):
                buf[key].append(val)
            if done.any():
                passed = info["obstacles_passed"]
                for i in np.flatnonzero(done):
                    finished.append((int(passed[i]), self.ep_ret_task[i], self.ep_ret_div[i]))
                self.ep_ret_task[done] = 0.0
                self.ep_ret_div[done] = 0.0
                env.reset(self.rng["env"], skills=self._sample_skills(int(done.sum())), mask=done)
        s_last = self._policy_obs(env.obs_state())
        z_last = env.skills.copy()
        stacked = {k: np.stack(v) for k, v in buf.items()}
        stacked["v_task_last"] = self.v_task(s_last, z_last)
        stacked["v_div_last"] = self.v_div(s_last, z_last)
        return stacked, finished

    def make_batch(self, roll):
        cfg = self.cfg.ppo
        vt = np.vstack([roll["v_task"], roll["v_task_last"][None]])
        vd = np.vstack([roll["v_div"], roll["v_div_last"][None]])
        adv_t, ret_t = gae(roll["r_task"], vt, roll["done"], cfg["gamma"], cfg["gae_lambda"])
        adv_d, ret_d = gae(roll["r_div"], vd, roll["done"], cfg["gamma"], cfg["gae_lambda"])
        flat = lambda x: x.reshape(-1, *x.shape[2:])  # noqa: E731
        return RolloutBatch(obs=flat(roll["obs"]), skills=flat(roll["z"]), actions=flat(roll["a"]),
                            logp_old=flat(roll["logp"]), r_task=flat(roll["r_task"]),
                            r_div=flat(roll["r_div"]), dones=flat(roll["done"]),
                            v_task=flat(roll["v_task"]), v_div=flat(roll["v_div"]),
                            adv_task=flat(adv_t), adv_div=flat(adv_d), ret_task=flat(ret_t),
                            ret_div=flat(ret_d))

    # ------------------------------------------------------------- iteration
    def step(self):
        self.phase_log = []
        roll, finished = self.collect()
        self.phase_log.append("collect")

        intr_stats = {}
        if self.intrinsic is not None:
            f = roll["f"].reshape(-1, roll["f"].shape[-1])
            fn = roll["f_next"].reshape(-1, roll["f_next"].shape[-1])
            z = roll["z"].reshape(-1, roll["z"].shape[-1])
            intr_stats = self.intrinsic.update(f, fn, z)
            self.phase_log.append("intrinsic")

        batch = self.make_batch(roll)
        lam = self.lam.value
        diag = self.learner.update(batch, lam, self.rng["ppo"])
        self.phase_log.append("ppo")

        meta = 0.0
        if self.intrinsic is not None and self.cfg.method != "div-only":
            idx = diag["last_idx"]
            snap = bilevel.snapshot(self.policy, diag["theta_before"], diag["theta_after"],
                                    batch.obs[idx], batch.skills[idx], batch.actions[idx],
                                    batch.adv_task[idx], batch.adv_div[idx], self.learner.config.lr,
                                    per_sample=self.cfg.meta_grad_mode == "per_sample")
            meta = bilevel.lambda_grad(snap)
            if not np.isfinite(meta):
                raise FloatingPointError("non-finite meta-gradient")
        bilevel.lambda_step(self.lam, meta)
        self.phase_log.append("lambda")

        for p, rt, rd in finished:
            self.recent.append((p, rt, rd))
        row = self._metrics_row(roll, diag, intr_stats, meta, len(finished))
        self.rows.append(row)
        self.iteration += 1
        return row

    def _metrics_row(self, roll, diag, intr, meta, n_finished):
        if self.recent:
            rec = np.array(self.recent, dtype=np.float64)
            passed = float(rec[:, 0].mean())
            success = float(np.mean(rec[:, 0] >= self.cfg.success_min_obstacles))
            ret_t, ret_d = float(rec[:, 1].mean()), float(rec[:, 2].mean())
        else:
            passed = success = ret_t = ret_d = 0.0
        kappa = getattr(self.intrinsic, "kappa", float("nan")) if self.intrinsic is not None else float("nan")
        return {
            "iteration": self.iteration, "mean_r_task": float(roll["r_task"].mean()),
            "mean_r_div": float(roll["r_div"].mean()), "lambda": self.lam.value, "meta_grad": float(meta),
            "surrogate": diag["surrogate"], "loss_task": diag["loss_task"], "loss_div": diag["loss_div"],
            "entropy": diag["entropy"], "kappa": float(kappa),
            "violation": float(intr.get("violation", float("nan"))), "obstacles_passed": passed,
            "success_rate": success, "episode_return_task": ret_t, "episode_return_div": ret_d,
            "episodes": n_finished,
        }

    # --------------------------------------------------------------- driving
    def run(self, metrics_path=None, checkpoint_dir=None, iterations=None, callback=None):
        """Run ``iterations`` (default: config) iterations, writing metrics and checkpoints."""
        total = self.cfg.iterations if iterations is None else iterations
        writer = MetricsWriter(metrics_path, self.cfg, self.seed) if metrics_path else None
        try:
            for _ in range(total):
                try:
                    row = self.step()
                except (NumericalFault, FloatingPointError) as e:
                    if checkpoint_dir:
                        self.save(os.path.join(checkpoint_dir, f"fault_{self.iteration}.json"))
                    raise TrainingFault(f"numerical fault at iteration {self.iteration}: {e}") from e
                if writer:
                    writer.write(row)
                if checkpoint_dir and self.cfg.checkpoint_every and self.iteration % self.cfg.checkpoint_every == 0:
                    self.save(os.path.join(checkpoint_dir, f"ckpt_{self.iteration:06d}.json"))
                if callback is not None:
                    callback(self, row)
                stop = self.cfg.stop_at_obstacles
                if stop is not None and row["obstacles_passed"] >= stop:
                    break
        finally:
            if writer:
                writer.close()
        if checkpoint_dir:
            self.save(os.path.join(checkpoint_dir, "final.json"))
        return self.rows

    # ------------------------------------------------------------ checkpoint
    def checkpoint(self):
        return {
            "format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
            "config": self.cfg.to_dict(), "seed": self.seed, "iteration": self.iteration,
            "policy": self.policy.state_dict(), "v_task": self.v_task.state_dict(),
            "v_div": self.v_div.state_dict(),
            "intrinsic": self.intrinsic.state_dict() if self.intrinsic is not None else None,
            "lambda": self.lam.state_dict(), "optimizers": self.learner.state_dict(),
            "rng": {k: g.bit_generator.state for k, g in self.rng.items()},
        }

    @classmethod
    def restore(cls, ckpt):
        """Rebuild a trainer from a checkpoint dict (environment state starts fresh)."""
        cfg = ExperimentConfig.from_dict(ckpt["config"])
        tr = cls(cfg, ckpt["seed"])
        tr.policy.params[:] = ckpt["policy"]["params"]
        tr.v_task.net.params[:] = Critic.from_state(ckpt["v_task"]).net.params
        tr.v_div.net.params[:] = Critic.from_state(ckpt["v_div"]).net.params
        if tr.intrinsic is not None and ckpt["intrinsic"] is not None:
            tr.intrinsic.load_state(ckpt["intrinsic"])
        tr.lam = LambdaState.from_state(ckpt["lambda"])
        tr.learner.load_optimizers(ckpt["optimizers"])
        for k, state in ckpt["rng"].items():
            tr.rng[k].bit_generator.state = state
        tr.iteration = ckpt["iteration"]
        return tr

    def save(self, path):
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w") as f:
            json.dump(self.checkpoint(), f)
        return path


class MetricsWriter:
    def __init__(self, path, cfg, seed):
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        self.f = open(path, "w", newline="")
        self.f.write(f"# sdax-metrics v{METRICS_VERSION} task={cfg.task} method={cfg.method} "
                     f"lambda={cfg.effective_lambda()[0]}:{cfg.effective_lambda()[1]!r} seed={seed}\n")
        self.w = csv.writer(self.f)
        self.w.writerow(METRICS_HEADER)

    def write(self, row):
        self.w.writerow([repr(row[k]) if isinstance(row[k], float) else row[k] for k in METRICS_HEADER])
        self.f.flush()

    def close(self):
        self.f.close()


def read_metrics(path):
    """Return ``(meta, columns)`` for a metrics CSV."""
    meta = {}
    with open(path, newline="") as f:
        first = f.readline()
        if not first.startswith("# sdax-metrics"):
            raise ValueError(f"{path} is not a metrics file")
        for tok in first.strip("# \n").split()[2:]:
            k, _, v = tok.partition("=")
            meta[k] = v
        reader = csv.DictReader(f)
        rows = list(reader)
    cols = {k: np.array([float(r[k]) for r in rows]) for k in METRICS_HEADER}
    return meta, cols


def load_checkpoint(path):
    with open(path) as f:
        d = json.load(f)
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a training checkpoint")
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')}")
    return d


def train(config: ExperimentConfig, out_dir=None, seeds=None, iterations=None):
    """Run every seed of ``config``; returns ``{seed: (metrics_path, final_checkpoint)}``."""
    out_dir = out_dir or config.out_dir
    results = {}
    for seed in seeds or config.seeds:
        name = config.run_name(seed)
        trainer = Trainer(config, seed)
        metrics = os.path.join(out_dir, f"{name}.csv")
        ckpt_dir = os.path.join(out_dir, name)
        trainer.run(metrics, ckpt_dir, iterations=iterations)
        results[seed] = (metrics, os.path.join(ckpt_dir, "final.json"))
    return results


def _run_job(job):
    cfg_dict, seed, metrics_path, checkpoint_dir = job
    trainer = Trainer(ExperimentConfig.from_dict(cfg_dict), seed)
    rows = trainer.run(metrics_path, checkpoint_dir)
    return {"seed": seed, "iterations": len(rows),
            "max_obstacles_passed": max((r["obstacles_passed"] for r in rows), default=0.0),
            "final_obstacles_passed": rows[-1]["obstacles_passed"] if rows else 0.0}


def run_matrix(jobs, workers=None):
    """Run independent ``(config, seed, metrics_path, checkpoint_dir)`` jobs.

    Jobs share nothing, so they go to separate processes when more than one
    worker is available.  Returns one summary dict per job, in order.
    """
    jobs = [(cfg.to_dict(), seed, m, c) for cfg, seed, m, c in jobs]
    workers = workers or min(len(jobs), os.cpu_count() or 1)
    if workers <= 1:
        return [_run_job(j) for j in jobs]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(_run_job, jobs))
