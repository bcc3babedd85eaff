"""Skill-conditioned diagonal-Gaussian policy pi(a | s, z)."""
from __future__ import annotations

import numpy as np

from .diffnet import MLP, ConfigError, mlp_specs

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
LOG_2PI = np.log(2.0 * np.pi)


class NumericalFault(RuntimeError):
    """A network or simulator produced a non-finite value."""


def sample_skills(rng, n, skill_dim=1):
    return rng.standard_normal((n, skill_dim))


def gaussian_logp(a, mean, log_std):
    std = np.exp(log_std)
    return np.sum(-0.5 * ((a - mean) / std) ** 2 - log_std - 0.5 * LOG_2PI, axis=-1)


class GaussianPolicy:
    """Mean from an MLP over ``concat(s, z)``; state-independent log std.

    The trainable vector is ``[mlp params..., log_std...]`` so gradients of
    log pi are a single flat array.
    """

    def __init__(self, obs_dim, skill_dim, action_dim, hidden=(64, 64), activation="elu",
                 rng=None, init_log_std=0.0):
        self.obs_dim, self.skill_dim, self.action_dim = obs_dim, skill_dim, action_dim
        self.net = MLP(mlp_specs(obs_dim + skill_dim, hidden, action_dim, activation))
        if rng is not None:
            self.net.init(rng, final_scale=0.01)
        self.params = np.concatenate([self.net.params, np.full(action_dim, float(init_log_std))])

    @property
    def n_params(self):
        return self.params.size

    def split(self, params=None):
        params = self.params if params is None else params
        return params[: self.net.n_params], params[self.net.n_params:]

    def inputs(self, s, z):
        s = np.atleast_2d(np.asarray(s, dtype=np.float64))
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if s.shape[-1] != self.obs_dim:
            raise ConfigError(f"state has {s.shape[-1]} dims, policy expects {self.obs_dim}")
        if z.shape[-1] != self.skill_dim:
            raise ConfigError(f"skill has {z.shape[-1]} dims, policy expects {self.skill_dim}")
        if z.shape[0] == 1 and s.shape[0] > 1:
            z = np.repeat(z, s.shape[0], axis=0)
        return np.concatenate([s, z], axis=1)

    def distribution(self, s, z, params=None):
        net_p, log_std = self.split(params)
        mean, cache = self.net.forward(self.inputs(s, z), net_p)
        log_std = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
        if not np.all(np.isfinite(mean)):
            raise NumericalFault("policy produced a non-finite action mean")
        return mean, log_std, cache

    def act(self, s, z, rng, params=None, deterministic=False):
        """Sample a batch of actions; returns ``(actions, log_probs)``."""
        mean, log_std, _ = self.distribution(s, z, params)
        if deterministic:
            a = mean.copy()
        else:
            a = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
        return a, gaussian_logp(a, mean, log_std)

    def log_prob(self, s, z, a, params=None):
        mean, log_std, _ = self.distribution(s, z, params)
        return gaussian_logp(np.atleast_2d(a), mean, log_std)

    def entropy(self, params=None):
        _, log_std = self.split(params)
        log_std = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
        return float(np.sum(log_std + 0.5 * (LOG_2PI + 1.0)))

    def evaluate(self, s, z, a, params=None):
        """Log-probabilities plus the context ``grad_from`` needs."""
        mean, log_std, cache = self.distribution(s, z, params)
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        return gaussian_logp(a, mean, log_std), (a, mean, log_std, cache, params)

    def grad_from(self, ctx, weights=None, per_sample=False):
        a, mean, log_std, cache, params = ctx
        var = np.exp(2.0 * log_std)
        w = np.ones(a.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
        cot_mean = (a - mean) / var * w[:, None]
        net_p, raw_log_std = self.split(params)
        # clipped log_std entries carry no gradient
        inside = (raw_log_std >= LOG_STD_MIN) & (raw_log_std <= LOG_STD_MAX)
        d_log_std = ((a - mean) ** 2 / var - 1.0) * w[:, None] * inside
        g_net = self.net.backward(cache, cot_mean, net_p, per_sample=per_sample)
        if per_sample:
            return np.concatenate([g_net, d_log_std], axis=1)
        return np.concatenate([g_net, d_log_std.sum(axis=0)])

    def logp_grad(self, s, z, a, weights=None, params=None, per_sample=False):
        """Gradient of ``sum_n w_n log pi(a_n | s_n, z_n)`` w.r.t. the flat parameters.

        ``weights`` defaults to ones.  With ``per_sample=True`` returns one
        row per sample (unweighted unless ``weights`` is given).
        """
        _, ctx = self.evaluate(s, z, a, params)
        return self.grad_from(ctx, weights, per_sample)

    def clamp_log_std(self):
        n = self.net.n_params
        np.clip(self.params[n:], LOG_STD_MIN, LOG_STD_MAX, out=self.params[n:])

    def skill_input_grad(self, s, z, params=None):
        """d(sum of action means)/dz, to check the skill actually conditions the policy."""
        net_p, _ = self.split(params)
        x = self.inputs(s, z)
        mean, cache = self.net.forward(x, net_p)
        _, dx = self.net.backward(cache, np.ones_like(mean), net_p, input_grad=True)
        return dx[:, self.obs_dim:]

    def state_dict(self):
        return {"obs_dim": self.obs_dim, "skill_dim": self.skill_dim, "action_dim": self.action_dim,
                "net": self.net.to_dict(), "params": self.params.tolist()}

    @classmethod
    def from_state(cls, d):
        pol = cls.__new__(cls)
        pol.obs_dim, pol.skill_dim, pol.action_dim = d["obs_dim"], d["skill_dim"], d["action_dim"]
        pol.net = MLP.from_dict(d["net"])
        pol.params = np.asarray(d["params"], dtype=np.float64)
        return pol
