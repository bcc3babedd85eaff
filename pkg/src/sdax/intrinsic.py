"""Diversity and exploration rewards computed on selected state features.

All providers share one interface: ``reward(f, f_next, z)`` for the reward of
a transition, and ``update(f, f_next, z)`` for one learning step on a batch.
"""
from __future__ import annotations

import numpy as np

from .diffnet import MLP, Adam, ConfigError, mlp_specs

LOG_2PI = np.log(2.0 * np.pi)


class Metra:
    """Skill-space representation phi with a Lagrangian distance constraint.

    phi is pushed to maximize (phi(f') - phi(f)) . z subject to
    ||phi(f) - phi(f')||^2 <= 1 on adjacent states, relaxed by a slack
    ``eps`` and enforced by the multiplier ``kappa``.
    """

    name = "metra"

    def __init__(self, feat_dim, skill_dim, rng, hidden=(64, 64), kappa=30.0, eps=1e-3,
                 lr=1e-4, kappa_lr=1e-3, updates_per_iter=1, batch_size=None):
        self.phi = MLP(mlp_specs(feat_dim, hidden, skill_dim, "relu"))
        self.phi.init(rng)
        self.rng = rng
        self.batch_size = batch_size
        self.kappa = float(kappa)
        self.eps = eps
        self.lr, self.kappa_lr = lr, kappa_lr
        self.updates_per_iter = updates_per_iter
        self.opt = Adam(self.phi.n_params)
        self.opt_kappa = Adam(1)

    def reward(self, f, f_next, z):
        return metra_reward(self.phi, f, f_next, z)

    def update(self, f, f_next, z):
        stats = {}
        for idx in _minibatches(self.rng, len(f), self.batch_size, self.updates_per_iter):
            stats = metra_update(self, f[idx], f_next[idx], z[idx])
        stats["violation"] = constraint_violation(self.phi, f, f_next)
        return stats

    def state_dict(self):
        return {"kind": self.name, "phi": self.phi.to_dict(), "kappa": self.kappa, "eps": self.eps,
                "lr": self.lr, "kappa_lr": self.kappa_lr, "updates_per_iter": self.updates_per_iter,
                "opt": self.opt.state_dict(), "opt_kappa": self.opt_kappa.state_dict()}

    def load_state(self, d):
        self.phi = MLP.from_dict(d["phi"])
        self.kappa, self.eps = d["kappa"], d["eps"]
        self.opt = Adam.from_state(d["opt"])
        self.opt_kappa = Adam.from_state(d["opt_kappa"])


def _minibatches(rng, n, batch_size, count):
    for _ in range(count):
        if batch_size is None or batch_size >= n:
            yield slice(None)
        else:
            yield rng.choice(n, size=batch_size, replace=False)


def metra_reward(phi, f, f_next, z):
    d = phi(f_next) - phi(f)
    return np.sum(d * np.atleast_2d(z), axis=-1) if d.ndim > 1 else float(d @ z)


def constraint_slack(delta, eps):
    """min(eps, 1 - ||delta||^2) per row."""
    return np.minimum(eps, 1.0 - np.sum(delta**2, axis=-1))


def constraint_violation(phi, f, f_next):
    d = phi(f_next) - phi(f)
    return float(np.mean(np.maximum(0.0, np.sum(d**2, axis=-1) - 1.0)))


def metra_objective(phi, f, f_next, z, kappa, eps, params=None):
    """Mean of (delta . z + kappa * slack) and its gradient w.r.t. phi's parameters."""
    f, f_next, z = np.atleast_2d(f), np.atleast_2d(f_next), np.atleast_2d(z)
    n = f.shape[0]
    y0, c0 = phi.forward(f, params)
    y1, c1 = phi.forward(f_next, params)
    delta = y1 - y0
    sq = np.sum(delta**2, axis=1)
    slack = np.minimum(eps, 1.0 - sq)
    objective = float(np.mean(np.sum(delta * z, axis=1) + kappa * slack))
    # the penalty is active only where 1 - ||delta||^2 < eps
    active = (1.0 - sq) < eps
    cot = (z - 2.0 * kappa * active[:, None] * delta) / n
    grad = phi.backward(c1, cot, params) - phi.backward(c0, cot, params)
    return objective, grad, slack, sq


def metra_update(state, f, f_next, z):
    """One ascent step on phi, then one descent step on kappa (kept >= 0)."""
    objective, grad, slack, sq = metra_objective(state.phi, f, f_next, z, state.kappa, state.eps)
    state.opt.step(state.phi.params, -grad, state.lr)
    k = np.array([state.kappa])
    state.opt_kappa.step(k, np.array([float(np.mean(slack))]), state.kappa_lr)
    state.kappa = max(0.0, float(k[0]))
    return {"objective": objective, "kappa": state.kappa,
            "violation": float(np.mean(np.maximum(0.0, sq - 1.0)))}


class Diayn:
    """Continuous-skill discriminator q(z | f) = N(mu(f), I)."""

    name = "diayn"

    def __init__(self, feat_dim, skill_dim, rng, hidden=(64, 64), lr=1e-4, updates_per_iter=1,
                 batch_size=None):
        self.disc = MLP(mlp_specs(feat_dim, hidden, skill_dim, "relu"))
        self.disc.init(rng)
        self.rng = rng
        self.batch_size = batch_size
        self.lr = lr
        self.updates_per_iter = updates_per_iter
        self.opt = Adam(self.disc.n_params)

    def reward(self, f, f_next, z):
        return diayn_reward(self.disc, f_next, z)

    def update(self, f, f_next, z):
        stats = {}
        for idx in _minibatches(self.rng, len(f), self.batch_size, self.updates_per_iter):
            stats = diayn_update(self, f_next[idx], z[idx])
        return stats

    def state_dict(self):
        return {"kind": self.name, "disc": self.disc.to_dict(), "lr": self.lr,
                "opt": self.opt.state_dict()}

    def load_state(self, d):
        self.disc = MLP.from_dict(d["disc"])
        self.opt = Adam.from_state(d["opt"])


def gaussian_logpdf_unit(x, mean):
    x, mean = np.atleast_2d(x), np.atleast_2d(mean)
    k = x.shape[-1]
    return -0.5 * np.sum((x - mean) ** 2, axis=-1) - 0.5 * k * LOG_2PI


def diayn_reward(disc, f, z):
    """log N(z; mu(f), I) - log N(z; 0, I)."""
    mu = disc(np.atleast_2d(f))
    r = gaussian_logpdf_unit(z, mu) - gaussian_logpdf_unit(z, np.zeros_like(mu))
    return r if np.ndim(f) > 1 else float(r[0])


def diayn_loss(disc, f, z):
    return float(-np.mean(gaussian_logpdf_unit(z, disc(np.atleast_2d(f)))))


def diayn_objective(disc, f, z, params=None):
    """Mean log N(z; mu(f), I) and its gradient."""
    f, z = np.atleast_2d(f), np.atleast_2d(z)
    mu, cache = disc.forward(f, params)
    value = float(np.mean(gaussian_logpdf_unit(z, mu)))
    return value, disc.backward(cache, (z - mu) / f.shape[0], params)


def diayn_update(state, f, z):
    value, grad = diayn_objective(state.disc, f, z)
    if np.any(grad):
        state.opt.step(state.disc.params, -grad, state.lr)
    return {"loss": -value}


class Rnd:
    """Prediction error of a trained network against a frozen random one."""

    name = "rnd"

    def __init__(self, feat_dim, rng, out_dim=16, hidden=(64, 64), lr=1e-3, updates_per_iter=1,
                 scale=1.0, batch_size=None):
        self.target = MLP(mlp_specs(feat_dim, hidden, out_dim, "relu"))
        self.target.init(rng)
        self.predictor = MLP(mlp_specs(feat_dim, hidden, out_dim, "relu"))
        self.predictor.init(rng)
        self.rng = rng
        self.batch_size = batch_size
        self.lr = lr
        self.updates_per_iter = updates_per_iter
        self.scale = scale
        self.opt = Adam(self.predictor.n_params)

    def reward(self, f, f_next, z):
        return self.scale * rnd_bonus(self, f_next)

    def update(self, f, f_next, z):
        stats = {}
        for idx in _minibatches(self.rng, len(f), self.batch_size, self.updates_per_iter):
            stats = rnd_update(self, f_next[idx])
        return stats

    def state_dict(self):
        return {"kind": self.name, "target": self.target.to_dict(), "predictor": self.predictor.to_dict(),
                "lr": self.lr, "scale": self.scale, "opt": self.opt.state_dict()}

    def load_state(self, d):
        self.target = MLP.from_dict(d["target"])
        self.predictor = MLP.from_dict(d["predictor"])
        self.opt = Adam.from_state(d["opt"])


def rnd_bonus(state, f):
    err = state.predictor(np.atleast_2d(f)) - state.target(np.atleast_2d(f))
    b = np.sum(err**2, axis=-1)
    return b if np.ndim(f) > 1 else float(b[0])


def rnd_loss(predictor, target, f, params=None):
    """Mean squared prediction error and its gradient w.r.t. the predictor."""
    f = np.atleast_2d(f)
    pred, cache = predictor.forward(f, params)
    err = pred - target(f)
    return float(np.mean(np.sum(err**2, axis=1))), predictor.backward(cache, 2.0 * err / f.shape[0], params)


def rnd_update(state, f):
    loss, grad = rnd_loss(state.predictor, state.target, f)
    state.opt.step(state.predictor.params, grad, state.lr)
    return {"loss": loss}


def make_intrinsic(kind, feat_dim, skill_dim, rng, **kwargs):
    if kind == "metra":
        return Metra(feat_dim, skill_dim, rng, **kwargs)
    if kind == "diayn":
        return Diayn(feat_dim, skill_dim, rng, **kwargs)
    if kind == "rnd":
        return Rnd(feat_dim, rng, **kwargs)
    raise ConfigError(f"unknown intrinsic reward {kind!r}")
