import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdax.diffnet import ConfigError
from sdax.policy import GaussianPolicy
from sdax.ppo import (Critic, PpoConfig, PpoLearner, RolloutBatch, clipped_surrogate, gae, mix_advantages)


def brute_force_gae(r, v, d, gamma, lam):
    """Sum of discounted TD residuals, cut at the first episode end."""
    T = len(r)
    delta = [r[t] + gamma * v[t + 1] * (1 - d[t]) - v[t] for t in range(T)]
    adv = np.zeros(T)
    for t in range(T):
        total, w = 0.0, 1.0
        for k in range(t, T):
            total += w * delta[k]
            if d[k]:
                break
            w *= gamma * lam
        adv[t] = total
    return adv


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 24), st.integers(0, 2**31 - 1))
def test_gae_matches_brute_force(T, seed):
    rng = np.random.default_rng(seed)
    r, v = rng.standard_normal(T), rng.standard_normal(T + 1)
    d = (rng.random(T) < 0.2).astype(float)
    adv, ret = gae(r[:, None], v[:, None], d[:, None], 0.99, 0.95)
    assert np.allclose(adv[:, 0], brute_force_gae(r, v, d, 0.99, 0.95), atol=1e-10)
    assert np.allclose(ret[:, 0], adv[:, 0] + v[:-1])


def test_gae_lambda_zero_is_one_step_td():
    r, v, d = np.array([[1.0], [2.0]]), np.array([[0.5], [0.2], [0.1]]), np.zeros((2, 1))
    adv, _ = gae(r, v, d, 0.9, 0.0)
    assert np.allclose(adv[:, 0], [1 + 0.9 * 0.2 - 0.5, 2 + 0.9 * 0.1 - 0.2])


def test_gae_shape_mismatch():
    with pytest.raises(ConfigError):
        gae(np.zeros((3, 2)), np.zeros((3, 2)), np.zeros((3, 2)), 0.99, 0.95)


def test_defaults():
    c = PpoConfig()
    assert (c.clip, c.epochs, c.gae_lambda, c.gamma, c.horizon, c.entropy_coef, c.lr, c.num_minibatches) == \
        (0.2, 5, 0.95, 0.99, 24, 0.001, 0.0005, 4)


def test_clipped_surrogate_gradient():
    rng = np.random.default_rng(0)
    logp = rng.normal(0, 0.3, 50)
    adv = rng.standard_normal(50)
    obj, d = clipped_surrogate(np.exp(logp), adv, 0.2)
    h = 1e-7
    fd = (clipped_surrogate(np.exp(logp + h), adv, 0.2)[0] - clipped_surrogate(np.exp(logp - h), adv, 0.2)[0]) / (2 * h)
    assert np.allclose(d, fd, atol=1e-5)


def test_clipped_surrogate_values():
    obj, d = clipped_surrogate(np.array([1.5, 0.5, 1.1]), np.array([1.0, -1.0, 2.0]), 0.2)
    assert np.allclose(obj, [1.2, -0.8, 2.2])
    assert np.allclose(d, [0.0, 0.0, 2.2])


def test_mix_advantages():
    assert np.allclose(mix_advantages(np.array([1.0, 2.0]), np.array([0.5, -1.0]), 2.0), [2.0, 0.0])


def test_critic_gradient():
    rng = np.random.default_rng(1)
    c = Critic(3, 1, hidden=(6,), rng=rng)
    s, z, ret = rng.standard_normal((5, 3)), rng.standard_normal((5, 1)), rng.standard_normal(5)
    loss, g = c.loss_and_grad(s, z, ret, 0.5)
    p = c.net.params.copy()
    fd = np.zeros_like(p)
    for i in range(p.size):
        pp, pm = p.copy(), p.copy()
        pp[i] += 1e-6
        pm[i] -= 1e-6
        fd[i] = (0.5 * np.mean((c(s, z, pp) - ret) ** 2) - 0.5 * np.mean((c(s, z, pm) - ret) ** 2)) / 2e-6
    assert np.allclose(g, fd, atol=1e-7)
    assert loss == pytest.approx(0.5 * np.mean((c(s, z) - ret) ** 2))


def bandit_batch(pol, n, rng, adv_fn):
    s, z = np.zeros((n, 2)), rng.standard_normal((n, 1))
    a, logp = pol.act(s, z, rng)
    adv = adv_fn(a)
    zeros = np.zeros(n)
    return RolloutBatch(obs=s, skills=z, actions=a, logp_old=logp, r_task=adv, r_div=zeros, dones=zeros,
                        v_task=zeros, v_div=zeros, adv_task=adv, adv_div=zeros, ret_task=adv, ret_div=zeros)


def test_ppo_moves_mean_towards_positive_advantage():
    rng = np.random.default_rng(2)
    pol = GaussianPolicy(2, 1, 1, hidden=(16,), rng=rng)
    learner = PpoLearner(pol, Critic(2, 1, (16,), rng=rng), Critic(2, 1, (16,), rng=rng))
    for _ in range(30):
        learner.update(bandit_batch(pol, 512, rng, lambda a: a[:, 0]), 0.0, rng)
    assert pol.distribution(np.zeros((1, 2)), np.zeros((1, 1)))[0][0, 0] > 0.5


def test_ppo_diagnostics_and_lambda_mixing():
    rng = np.random.default_rng(3)
    pol = GaussianPolicy(2, 1, 1, hidden=(8,), rng=rng)
    learner = PpoLearner(pol, Critic(2, 1, (8,), rng=rng), Critic(2, 1, (8,), rng=rng))
    b = bandit_batch(pol, 64, rng, lambda a: np.zeros(len(a)))
    b.adv_div = -b.actions[:, 0]
    out = learner.update(b, 5.0, rng)
    for key in ("surrogate", "loss_task", "loss_div", "clip_frac", "approx_kl", "entropy"):
        assert np.isfinite(out[key])
    assert not np.array_equal(out["theta_before"], out["theta_after"])
    assert len(out["last_idx"]) == 16
    # the diversity advantage alone drove the update, towards negative actions
    assert pol.distribution(np.zeros((1, 2)), np.zeros((1, 1)))[0][0, 0] < 0


def test_batch_check():
    rng = np.random.default_rng(4)
    pol = GaussianPolicy(2, 1, 1, hidden=(4,), rng=rng)
    b = bandit_batch(pol, 8, rng, lambda a: a[:, 0])
    b.r_div = np.zeros(7)
    with pytest.raises(ConfigError):
        b.check()
    b.r_div = np.zeros(8)
    b.adv_task = np.full(8, np.nan)
    with pytest.raises(FloatingPointError):
        b.check()
