import math

import numpy as np
import pytest

from sdax.diffnet import ConfigError
from sdax.policy import LOG_STD_MAX, LOG_STD_MIN, GaussianPolicy, NumericalFault, gaussian_logp, sample_skills


def make_policy(seed=0, **kw):
    pol = GaussianPolicy(5, 1, 3, hidden=(8, 8), rng=np.random.default_rng(seed), **kw)
    pol.params += 0.1 * np.random.default_rng(seed + 100).standard_normal(pol.n_params)
    return pol


def test_logp_matches_product_of_scalar_densities():
    mean = np.array([[0.3, -1.0]])
    log_std = np.array([0.2, -0.5])
    a = np.array([[1.0, -0.7]])
    expected = 0.0
    for ai, mi, si in zip(a[0], mean[0], np.exp(log_std)):
        expected += math.log(math.exp(-0.5 * ((ai - mi) / si) ** 2) / (si * math.sqrt(2 * math.pi)))
    assert gaussian_logp(a, mean, log_std)[0] == pytest.approx(expected, rel=1e-12)


def test_logp_grad_finite_differences():
    pol = make_policy()
    rng = np.random.default_rng(1)
    s, z = rng.standard_normal((7, 5)), rng.standard_normal((7, 1))
    a = rng.standard_normal((7, 3))
    w = rng.standard_normal(7)
    g = pol.logp_grad(s, z, a, weights=w)
    theta = pol.params.copy()
    fd = np.zeros_like(theta)
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += 1e-6
        tm[i] -= 1e-6
        fd[i] = (w @ pol.log_prob(s, z, a, tp) - w @ pol.log_prob(s, z, a, tm)) / 2e-6
    assert np.allclose(g, fd, rtol=1e-5, atol=1e-7)


def test_per_sample_gradients():
    pol = make_policy(2)
    rng = np.random.default_rng(3)
    s, z, a = rng.standard_normal((4, 5)), rng.standard_normal((4, 1)), rng.standard_normal((4, 3))
    rows = pol.logp_grad(s, z, a, per_sample=True)
    assert rows.shape == (4, pol.n_params)
    assert np.allclose(rows.sum(axis=0), pol.logp_grad(s, z, a))
    assert np.allclose(rows[2], pol.logp_grad(s[2:3], z[2:3], a[2:3]))


def test_entropy_matches_monte_carlo():
    pol = make_policy(4)
    rng = np.random.default_rng(5)
    s, z = rng.standard_normal((1, 5)), np.zeros((1, 1))
    a, logp = pol.act(np.repeat(s, 200_000, 0), np.repeat(z, 200_000, 0), rng)
    assert -logp.mean() == pytest.approx(pol.entropy(), abs=0.02)


def test_deterministic_act_is_mean_and_sampling_statistics():
    pol = make_policy(6)
    rng = np.random.default_rng(7)
    s, z = rng.standard_normal((1, 5)), rng.standard_normal((1, 1))
    mean, log_std, _ = pol.distribution(s, z)
    a, _ = pol.act(s, z, None, deterministic=True)
    assert np.array_equal(a, mean)
    samples, _ = pol.act(np.repeat(s, 50_000, 0), np.repeat(z, 50_000, 0), rng)
    assert np.allclose(samples.mean(0), mean[0], atol=0.03)
    assert np.allclose(samples.std(0), np.exp(log_std), rtol=0.03)


def test_skill_conditions_the_policy():
    pol = make_policy(8)
    rng = np.random.default_rng(9)
    s = rng.standard_normal((3, 5))
    assert np.any(np.abs(pol.skill_input_grad(s, rng.standard_normal((3, 1)))) > 0)
    m1 = pol.distribution(s, np.full((3, 1), -1.0))[0]
    m2 = pol.distribution(s, np.full((3, 1), 1.0))[0]
    assert not np.allclose(m1, m2)


def test_single_skill_broadcasts_over_batch():
    pol = make_policy(10)
    s = np.random.default_rng(11).standard_normal((4, 5))
    z = np.array([[0.5]])
    assert np.allclose(pol.log_prob(s, z, np.zeros((4, 3))), pol.log_prob(s, np.repeat(z, 4, 0), np.zeros((4, 3))))


def test_dimension_errors():
    pol = make_policy()
    with pytest.raises(ConfigError):
        pol.distribution(np.zeros((1, 4)), np.zeros((1, 1)))
    with pytest.raises(ConfigError):
        pol.distribution(np.zeros((1, 5)), np.zeros((1, 2)))


def test_log_std_clamp():
    pol = make_policy()
    n = pol.net.n_params
    pol.params[n:] = [-9.0, 0.0, 9.0]
    pol.clamp_log_std()
    assert list(pol.params[n:]) == [LOG_STD_MIN, 0.0, LOG_STD_MAX]


def test_non_finite_mean_raises():
    pol = make_policy()
    pol.params[:] = np.nan
    with pytest.raises(NumericalFault):
        pol.act(np.zeros((1, 5)), np.zeros((1, 1)), np.random.default_rng(0))


def test_state_round_trip():
    pol = make_policy(12)
    back = GaussianPolicy.from_state(pol.state_dict())
    s, z = np.ones((2, 5)), np.ones((2, 1))
    assert np.array_equal(back.distribution(s, z)[0], pol.distribution(s, z)[0])


def test_skill_prior_is_standard_normal():
    z = sample_skills(np.random.default_rng(0), 100_000, 2)
    assert z.shape == (100_000, 2)
    assert np.allclose(z.mean(0), 0, atol=0.02) and np.allclose(z.std(0), 1, atol=0.02)


def test_initial_policy_is_near_zero_mean():
    # final layer scaled down: the untrained policy is close to pure noise around 0
    pol = GaussianPolicy(5, 1, 3, rng=np.random.default_rng(0))
    mean = pol.distribution(np.random.default_rng(1).standard_normal((50, 5)), np.zeros((50, 1)))[0]
    assert np.abs(mean).max() < 0.2
