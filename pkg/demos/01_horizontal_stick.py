"""A single jump, followed by hand.

X climbs with slope 1 to height 1, jumps by 0.5 at time 1 and then falls
with slope -1. The jump opens a horizontal stick: H stays at 1 while X eats
back the 0.5 it gained, then H falls with X.
"""
import numpy as np

from heightlab.height import ExplorationStack, clamp_sum, height_brute_force, height_from_path
from heightlab.levypath import LevyPath

dt, n = 0.01, 400
t = np.arange(n + 1) * dt
x = np.where(t <= 1, t, 1.5 - (t - 1))
x[100] = 1.5
path = LevyPath(dt=dt, values=x, jump_index=np.array([100]), jump_size=np.array([0.5]), eps_sim=0.1,
                brownian_increments=np.zeros(n), small_jump_increments=np.zeros(n), drift=0.0, beta=1.0, alpha=0.0)

h = height_from_path(path, beta=1.0)
print("time   X      clamp  H")
for k in (50, 100, 120, 149, 150, 200, 300):
    print(f"{k * dt:4.2f}  {x[k]:5.2f}  {clamp_sum(path, k * dt):5.2f}  {h.values[k]:5.2f}")

# the one-pass stack agrees with the quadratic definition
assert np.allclose(h.values, height_brute_force(path, 1.0).values)

# the same bookkeeping, driven by hand
stack = ExplorationStack()
stack.move(1.0)
stack.jump(0.5)
for v in (1.3, 1.0, 0.5):
    stack.move(v)
    print(f"X={v:.1f}: entries {stack.entries()}, clamp sum {stack.clamp_sum:.2f}, H {stack.height(1.0):.2f}")
