"""The METRA representation and its Lagrange multiplier on fixed data.

phi is trained to stretch transitions along their skill direction while the
penalty kappa * min(eps, 1 - ||phi(s') - phi(s)||^2) keeps adjacent states
within unit distance.  Watch the violation drop and kappa settle.
"""
import numpy as np

from sdax.intrinsic import Metra, constraint_violation, metra_update

rng = np.random.default_rng(0)
f = rng.standard_normal((256, 2))
f_next = f + 4.0 * rng.standard_normal((256, 2))  # far apart: the constraint starts violated
z = rng.standard_normal((256, 1))

m = Metra(2, 1, np.random.default_rng(1))
print(f"step    0  violation {constraint_violation(m.phi, f, f_next):.4f}  kappa {m.kappa:.3f}")
for step in range(1, 501):
    stats = metra_update(m, f, f_next, z)
    if step % 100 == 0:
        print(f"step {step:4d}  violation {stats['violation']:.4f}  kappa {m.kappa:.3f}  "
              f"objective {stats['objective']:.3f}")
print("mean skill reward on the data:", float(m.reward(f, f_next, z).mean()))
