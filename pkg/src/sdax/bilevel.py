"""Meta-gradient update of the balancing weight lambda.

lambda scales the diversity advantage inside the policy update, and is itself
moved along d J_task / d lambda, estimated as

    alpha * <mean(A_task * grad log pi_{theta'}), mean(A_div * grad log pi_theta)>

where theta' is the policy after the inner update.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffnet import ConfigError


@dataclass
class LambdaState:
    value: float = 10.0
    step_size: float = 1e-2
    lo: float = 1e-4
    hi: float = 100.0
    fixed: bool = False
    last_grad: float = 0.0
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.lo < 0 or self.lo > self.hi:
            raise ConfigError(f"bad lambda bounds [{self.lo}, {self.hi}]")
        if not self.fixed:
            self.value = float(np.clip(self.value, self.lo, self.hi))

    def state_dict(self):
        return {"value": self.value, "step_size": self.step_size, "lo": self.lo, "hi": self.hi,
                "fixed": self.fixed, "last_grad": self.last_grad}

    @classmethod
    def from_state(cls, d):
        return cls(**d)


@dataclass
class GradSnapshot:
    g_div: np.ndarray
    g_task_after: np.ndarray
    alpha: float


def theta_prime(policy, theta, s, z, a, adv_task, adv_div, alpha, lam):
    """One vanilla policy-gradient ascent step on the mixed advantage."""
    w = (adv_task + lam * adv_div) / len(adv_task)
    return theta + alpha * policy.logp_grad(s, z, a, weights=w, params=theta)


def snapshot(policy, theta, theta_after, s, z, a, adv_task, adv_div, alpha, per_sample=False):
    """Collect both gradient estimators on the same transitions.

    With ``per_sample=True`` the vectors are per-transition rows; the
    meta-gradient then averages the per-sample dot products.
    """
    n = len(adv_task)
    if per_sample:
        g_div = policy.logp_grad(s, z, a, params=theta, per_sample=True) * adv_div[:, None]
        g_task = policy.logp_grad(s, z, a, params=theta_after, per_sample=True) * adv_task[:, None]
    else:
        g_div = policy.logp_grad(s, z, a, weights=adv_div / n, params=theta)
        g_task = policy.logp_grad(s, z, a, weights=adv_task / n, params=theta_after)
    return GradSnapshot(g_div=g_div, g_task_after=g_task, alpha=alpha)


def lambda_grad(snap):
    gt, gd = np.asarray(snap.g_task_after), np.asarray(snap.g_div)
    if gt.shape != gd.shape:
        raise ConfigError(f"snapshot vectors differ in shape: {gt.shape} vs {gd.shape}")
    if gt.ndim == 2:
        return snap.alpha * float(np.mean(np.sum(gt * gd, axis=1)))
    return snap.alpha * float(gt @ gd)


def lambda_step(state, meta_grad):
    """Projected ascent on lambda; a no-op in fixed mode."""
    if not np.isfinite(meta_grad):
        raise FloatingPointError("non-finite meta-gradient")
    state.last_grad = float(meta_grad)
    if not state.fixed:
        state.value = float(np.clip(state.value + state.step_size * meta_grad, state.lo, state.hi))
    state.history.append(state.value)
    return state


class ScalarGaussianPolicy:
    """pi(a) = N(a; theta, sigma^2) with a single trainable parameter.

    Ignores state and skill; small enough to differentiate the outer
    objective through an inner update by finite differences.
    """

    def __init__(self, theta=0.0, sigma=1.0):
        self.params = np.array([float(theta)])
        self.sigma = float(sigma)

    @property
    def n_params(self):
        return 1

    def log_prob(self, s, z, a, params=None):
        theta = (self.params if params is None else params)[0]
        a = np.asarray(a, dtype=np.float64).reshape(-1)
        return -0.5 * ((a - theta) / self.sigma) ** 2 - np.log(self.sigma) - 0.5 * np.log(2.0 * np.pi)

    def logp_grad(self, s, z, a, weights=None, params=None, per_sample=False):
        theta = (self.params if params is None else params)[0]
        a = np.asarray(a, dtype=np.float64).reshape(-1)
        g = (a - theta) / self.sigma**2
        if weights is not None:
            g = g * np.asarray(weights, dtype=np.float64)
        return g[:, None] if per_sample else np.array([g.sum()])
