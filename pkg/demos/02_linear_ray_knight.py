"""Local times of the height process against a branching population.

Explore the genealogy encoded by X until X first falls to -x. The local time
of H at level t is then distributed like the population at time t of a
branching process started from mass x. With f(z) = -alpha z the mean is
x exp(-alpha t). This demo uses a small ensemble; the test suite runs the
full-size comparison.
"""
import math

from heightlab import FiniteAtoms, Mechanism
from heightlab.verify import ray_knight_linear

mech = Mechanism(alpha=0.5, beta=1.0, pi=FiniteAtoms([(1.0, 0.5)]))
rep = ray_knight_linear(mech, x=1.0, levels=[0.25, 0.5], n=500, dt=1e-3, eps_sim=0.01, delta=0.02, seed=1,
                        allowance=0.1, ks_tol=0.1)
print(rep.to_text())
for t in (0.25, 0.5):
    print(f"closed-form mean at t={t}: {math.exp(-0.5 * t):.4f}")
