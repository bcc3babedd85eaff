"""Check hand-written gradients against central finite differences.

Every learning signal in the package (PPO, the skill reward, the lambda
meta-gradient) runs through `MLP.backward` and `GaussianPolicy.logp_grad`,
so this is the first thing to trust.
"""
import numpy as np

from sdax.diffnet import MLP, mlp_specs
from sdax.policy import GaussianPolicy

rng = np.random.default_rng(0)

net = MLP(mlp_specs(4, (16, 16), 3, "elu"))
net.init(rng)
x, cot = rng.standard_normal((8, 4)), rng.standard_normal((8, 3))
_, cache = net.forward(x)
grad = net.backward(cache, cot)

h = 1e-6
worst = 0.0
for i in rng.choice(net.n_params, 25, replace=False):
    p_plus, p_minus = net.params.copy(), net.params.copy()
    p_plus[i] += h
    p_minus[i] -= h
    fd = (np.sum(net(x, p_plus) * cot) - np.sum(net(x, p_minus) * cot)) / (2 * h)
    worst = max(worst, abs(fd - grad[i]) / max(abs(fd) + abs(grad[i]), 1e-8))
print(f"MLP: worst relative error over 25 parameters = {worst:.2e}")

# the policy gradient also covers the log-std entries at the end of the vector
pol = GaussianPolicy(obs_dim=6, skill_dim=1, action_dim=2, hidden=(16,), rng=rng)
s, z = rng.standard_normal((5, 6)), rng.standard_normal((5, 1))
a, _ = pol.act(s, z, rng)
g = pol.logp_grad(s, z, a)
i = pol.n_params - 1
tp, tm = pol.params.copy(), pol.params.copy()
tp[i] += h
tm[i] -= h
fd = (pol.log_prob(s, z, a, tp).sum() - pol.log_prob(s, z, a, tm).sum()) / (2 * h)
print(f"policy d log pi / d log_std[-1]: analytic {g[i]:.8f}, finite difference {fd:.8f}")
