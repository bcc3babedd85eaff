"""PPO with GAE and separate task / diversity critics."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .diffnet import MLP, Adam, ConfigError, clip_grad_norm, mlp_specs

log = logging.getLogger(__name__)


@dataclass
class PpoConfig:
    clip: float = 0.2
    epochs: int = 5
    gae_lambda: float = 0.95
    gamma: float = 0.99
    horizon: int = 24
    entropy_coef: float = 0.001
    lr: float = 0.0005
    num_minibatches: int = 4
    value_coef: float = 0.5
    max_grad_norm: float = 1.0
    normalize_advantage: bool = True


def gae(rewards, values, dones, gamma, lam):
    """Generalized advantage estimates along axis 0.

    ``values`` carries one extra bootstrap row.  A ``done`` at step t stops
    bootstrapping from t+1.  Returns ``(advantages, returns)``.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    T = rewards.shape[0]
    if values.shape[0] != T + 1 or values.shape[1:] != rewards.shape[1:] or dones.shape != rewards.shape:
        raise ConfigError(
            f"gae shape mismatch: rewards {rewards.shape}, values {values.shape}, dones {dones.shape}")
    adv = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[1:])
    for t in range(T - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * values[t + 1] * nonterminal - values[t]
        running = delta + gamma * lam * nonterminal * running
        adv[t] = running
    return adv, adv + values[:-1]


class Critic:
    """Skill-conditioned value function v(s, z)."""

    def __init__(self, obs_dim, skill_dim, hidden=(64, 64), activation="elu", rng=None):
        self.obs_dim, self.skill_dim = obs_dim, skill_dim
        self.net = MLP(mlp_specs(obs_dim + skill_dim, hidden, 1, activation))
        if rng is not None:
            self.net.init(rng, final_scale=1.0)

    @property
    def params(self):
        return self.net.params

    def __call__(self, s, z, params=None):
        return self.evaluate(s, z, params)[0]

    def evaluate(self, s, z, params=None):
        x = np.concatenate([np.atleast_2d(s), np.atleast_2d(z)], axis=1)
        v, cache = self.net.forward(x, params)
        return v[:, 0], cache

    def loss_and_grad(self, s, z, returns, coef=0.5):
        v, cache = self.evaluate(s, z)
        err = v - returns
        loss = coef * float(np.mean(err**2))
        grad = self.net.backward(cache, (2.0 * coef / err.size) * err[:, None])
        return loss, grad

    def state_dict(self):
        return {"obs_dim": self.obs_dim, "skill_dim": self.skill_dim, "net": self.net.to_dict()}

    @classmethod
    def from_state(cls, d):
        c = cls.__new__(cls)
        c.obs_dim, c.skill_dim = d["obs_dim"], d["skill_dim"]
        c.net = MLP.from_dict(d["net"])
        return c


def critic_eval(critic, s, z):
    return critic(s, z)


@dataclass
class RolloutBatch:
    """Flat (T*N) arrays for one learning iteration."""

    obs: np.ndarray
    skills: np.ndarray
    actions: np.ndarray
    logp_old: np.ndarray
    r_task: np.ndarray
    r_div: np.ndarray
    dones: np.ndarray
    v_task: np.ndarray
    v_div: np.ndarray
    adv_task: np.ndarray = field(default=None)
    adv_div: np.ndarray = field(default=None)
    ret_task: np.ndarray = field(default=None)
    ret_div: np.ndarray = field(default=None)

    def __len__(self):
        return self.obs.shape[0]

    def check(self):
        n = len(self)
        for name, arr in asdict(self).items():
            if arr is not None and np.asarray(arr).shape[0] != n:
                raise ConfigError(f"batch column {name} has length {np.asarray(arr).shape[0]} != {n}")
        for name in ("adv_task", "adv_div"):
            arr = getattr(self, name)
            if arr is not None and not np.all(np.isfinite(arr)):
                raise FloatingPointError(f"non-finite {name}")


def mix_advantages(adv_task, adv_div, lam):
    return adv_task + lam * adv_div


def clipped_surrogate(ratio, adv, clip):
    """Per-sample PPO objective and d(objective)/d(log pi)."""
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip)
    unclipped_obj = ratio * adv
    obj = np.minimum(unclipped_obj, clipped * adv)
    # gradient only flows where the unclipped branch is the active minimum
    active = unclipped_obj <= clipped * adv
    return obj, np.where(active, ratio * adv, 0.0)


class PpoLearner:
    """Owns the policy, both critics and their optimizers."""

    def __init__(self, policy, v_task, v_div, config=None):
        self.policy, self.v_task, self.v_div = policy, v_task, v_div
        self.config = config or PpoConfig()
        self.opt_pi = Adam(policy.n_params)
        self.opt_task = Adam(v_task.net.n_params)
        self.opt_div = Adam(v_div.net.n_params)
        self.faults = 0

    def update(self, batch, lam, rng):
        """Clipped-surrogate epochs on the mixed advantage A_task + lam * A_div.

        Critics regress their own returns.  Returns a diagnostics dict that
        includes the parameters before and after the update and the indices
        of the final minibatch (consumed by the balancing-parameter update).
        """
        cfg = self.config
        batch.check()
        n = len(batch)
        theta_before = self.policy.params.copy()
        mb_size = max(1, n // cfg.num_minibatches)
        stats = {"surrogate": [], "loss_task": [], "loss_div": [], "clip_frac": [], "approx_kl": []}
        last_idx = None
        for _ in range(cfg.epochs):
            perm = rng.permutation(n)
            for k in range(cfg.num_minibatches):
                idx = perm[k * mb_size:(k + 1) * mb_size] if k < cfg.num_minibatches - 1 else perm[k * mb_size:]
                if idx.size == 0:
                    continue
                last_idx = idx
                s, z, a = batch.obs[idx], batch.skills[idx], batch.actions[idx]
                adv = mix_advantages(batch.adv_task[idx], batch.adv_div[idx], lam)
                if cfg.normalize_advantage and idx.size > 1:
                    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
                logp, ctx = self.policy.evaluate(s, z, a)
                log_ratio = logp - batch.logp_old[idx]
                ratio = np.exp(log_ratio)
                obj, d_logp = clipped_surrogate(ratio, adv, cfg.clip)
                surrogate = float(obj.mean())
                if not np.isfinite(surrogate):
                    self.faults += 1
                    log.warning("non-finite PPO surrogate, skipping minibatch")
                    continue
                g = self.policy.grad_from(ctx, weights=d_logp / idx.size)
                g[self.policy.net.n_params:] += cfg.entropy_coef
                g, _ = clip_grad_norm(g, cfg.max_grad_norm)
                self.opt_pi.step(self.policy.params, -g, cfg.lr)
                self.policy.clamp_log_std()

                lt, gt = self.v_task.loss_and_grad(s, z, batch.ret_task[idx], cfg.value_coef)
                ld, gd = self.v_div.loss_and_grad(s, z, batch.ret_div[idx], cfg.value_coef)
                if np.isfinite(lt):
                    self.opt_task.step(self.v_task.net.params, clip_grad_norm(gt, cfg.max_grad_norm)[0], cfg.lr)
                if np.isfinite(ld):
                    self.opt_div.step(self.v_div.net.params, clip_grad_norm(gd, cfg.max_grad_norm)[0], cfg.lr)
                stats["surrogate"].append(surrogate)
                stats["loss_task"].append(lt)
                stats["loss_div"].append(ld)
                stats["clip_frac"].append(float(np.mean(np.abs(ratio - 1.0) > cfg.clip)))
                stats["approx_kl"].append(float(np.mean(ratio - 1.0 - log_ratio)))
        out = {k: float(np.mean(v)) if v else float("nan") for k, v in stats.items()}
        out["entropy"] = self.policy.entropy()
        out["theta_before"] = theta_before
        out["theta_after"] = self.policy.params.copy()
        out["last_idx"] = last_idx
        return out

    def state_dict(self):
        return {"opt_pi": self.opt_pi.state_dict(), "opt_task": self.opt_task.state_dict(),
                "opt_div": self.opt_div.state_dict(), "config": asdict(self.config)}

    def load_optimizers(self, d):
        self.opt_pi = Adam.from_state(d["opt_pi"])
        self.opt_task = Adam.from_state(d["opt_task"])
        self.opt_div = Adam.from_state(d["opt_div"])


def ppo_update(learner, batch, lam, rng):
    return learner.update(batch, lam, rng)
