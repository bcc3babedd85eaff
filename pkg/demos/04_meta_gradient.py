"""The lambda meta-gradient versus brute-force differentiation.

A one-parameter Gaussian policy takes one policy-gradient step on the mixed
advantage A_task + lambda * A_div.  Differentiating the resulting task
objective with respect to lambda by finite differences should agree with the
cheap inner-product estimate used during training.
"""
import numpy as np

from sdax.bilevel import GradSnapshot, ScalarGaussianPolicy, lambda_grad, snapshot, theta_prime

rng = np.random.default_rng(0)
pol = ScalarGaussianPolicy(theta=0.3, sigma=1.0)
a = rng.normal(0.3, 1.0, 4096)
adv_task = np.sin(2 * a) + a
adv_div = a**2 - 1
alpha, lam = 0.05, 2.0
theta = pol.params.copy()


def task_return(lam_):
    tp = theta_prime(pol, theta, None, None, a, adv_task, adv_div, alpha, lam_)
    ratio = np.exp(pol.log_prob(None, None, a, tp) - pol.log_prob(None, None, a, theta))
    return np.mean(adv_task * ratio)


h = 1e-4
fd = (task_return(lam + h) - task_return(lam - h)) / (2 * h)
tp = theta_prime(pol, theta, None, None, a, adv_task, adv_div, alpha, lam)
est = lambda_grad(snapshot(pol, theta, tp, None, None, a, adv_task, adv_div, alpha))
print(f"finite difference {fd:.6f}   estimate {est:.6f}   relative error {abs(est - fd) / abs(fd):.2e}")

g = np.array([1.0, -2.0])
print("aligned gradients raise lambda:    ", lambda_grad(GradSnapshot(g, g, 0.1)))
print("opposed gradients lower lambda:    ", lambda_grad(GradSnapshot(g, -g, 0.1)))
print("orthogonal gradients leave it be:  ", lambda_grad(GradSnapshot(g, np.array([2.0, 1.0]), 0.1)))
