"""Height driven by its own local time, and the Girsanov weight.

With logistic f(z) = z - 2 z^2 the drift of the exploring path is
f'(local time already spent at the current level), minus a push (h - a)^+
above level a. The same law is reached from a driftless reference run by
reweighting with exp(int c dB / sqrt(2 beta) - int c^2 / (4 beta)).
"""
import numpy as np

from heightlab import InteractionFn, extinction_criterion
from heightlab.interact import InteractConfig, girsanov_weight, simulate_interacting_height, simulate_reference

f = InteractionFn.logistic(growth=1.0, competition=2.0, b=10.0)
print("extinction test for f:", extinction_criterion(f, beta=1.0))

cfg = InteractConfig(f=f, a=1.0, beta=1.0, x_target=0.5, dt=1e-3)
path, h, field, passage = simulate_interacting_height(cfg, seed=3)
print(f"interacting run: S_x = {passage.time:.3f}, max H = {h.values.max():.3f}")
print("local time at S_x, first bins:", np.round(field.estimate[-1][:6], 3))

weights = []
for seed in range(200):
    b = simulate_reference(cfg, seed)
    weights.append(girsanov_weight(b, cfg.f, cfg.a, cfg.beta).weight)
w = np.array(weights)
print(f"mean weight over 200 reference runs: {w.mean():.3f} +- {w.std(ddof=1) / np.sqrt(w.size):.3f}")
