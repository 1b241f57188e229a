"""Euler scheme for the coupled population field ``x -> Z^x``.

The field is built from increments ``V^(i) = Z^{x_i} - Z^{x_{i-1}}``, each a
nonnegative population whose drift is ``f(Z_below + V) - f(Z_below)``, with
``Z_below`` the total of the lower increments. Noise and jumps of different
increments are independent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .mechanism import InteractionFn, Mechanism, psi
from .seeding import make_rng, seed_split

BLOCK = 1000  # replicates per random stream, fixed so results do not depend on batching


@dataclass
class PopulationPath:
    """Recorded increments ``V[time, replicate, i]`` on ``times``.

    ``Z`` gives the cumulative field ``Z^{x_i} = sum_{j<=i} V^(j)``.
    """

    dt_pop: float
    x_list: np.ndarray
    times: np.ndarray
    increments: np.ndarray
    absorbed: np.ndarray  # [replicate, i] absorbed at 0 by the horizon
    meta: dict = field(default_factory=dict)

    @property
    def Z(self) -> np.ndarray:
        return np.cumsum(self.increments, axis=-1)

    def at(self, t: float) -> np.ndarray:
        """``Z`` at recorded time ``t``, shape ``(replicates, len(x_list))``."""
        k = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.times[k], t, abs_tol=0.5 * self.dt_pop):
            raise KeyError(f"time {t} was not recorded")
        return self.Z[k]


def _block(fn, mech, x_list, steps, rec_idx, dt, eps_sim, rng, n, small_jump_gauss):
    pi = mech.pi
    rate = comp = var_small = 0.0
    if not pi.is_zero:
        rate = pi.tail(eps_sim)
        comp = pi.moment(1, eps_sim, math.inf)
        var_small = pi.moment(2, 0.0, eps_sim) if small_jump_gauss else 0.0
    beta = mech.beta
    m = x_list.size
    v = np.tile(np.diff(np.concatenate([[0.0], x_list])), (n, 1))
    out = np.empty((rec_idx.size, n, m))
    r = 0
    while r < rec_idx.size and rec_idx[r] == 0:
        out[r] = v
        r += 1
    for k in range(1, steps + 1):
        ztot = np.cumsum(v, axis=1)
        zb = ztot - v
        drift = np.asarray(fn.f(ztot)) - np.asarray(fn.f(zb))
        noise = np.sqrt(2.0 * beta * v * dt) * rng.standard_normal((n, m))
        new = v + drift * dt + noise
        if rate > 0:
            counts = rng.poisson(dt * v * rate)
            tot = counts.sum()
            if tot:
                sizes = pi.sample(rng, int(tot), eps_sim)
                jumps = np.zeros(n * m)
                np.add.at(jumps, np.repeat(np.arange(n * m), counts.ravel()), sizes)
                new += jumps.reshape(n, m)
            new -= dt * v * comp
        if var_small > 0:
            new += np.sqrt(dt * v * var_small) * rng.standard_normal((n, m))
        v = np.maximum(new, 0.0)
        while r < rec_idx.size and rec_idx[r] == k:
            out[r] = v
            r += 1
    return out, v == 0.0


def simulate_csbp(fn: InteractionFn, mech: Mechanism, x_list, horizon: float, dt_pop: float, eps_sim: float,
                  seed, n_paths: int = 1, record_times=None, leg: int = 1,
                  small_jump_gauss: bool = True) -> PopulationPath:
    """Euler scheme for the coupled increments on ``[0, horizon]``.

    Replicates are generated in blocks of ``BLOCK`` with independent streams
    ``seed_split(seed, leg, block)``.
    """
    x_list = np.asarray(x_list, dtype=float)
    if x_list.ndim != 1 or x_list.size == 0 or np.any(x_list <= 0) or np.any(np.diff(x_list) < 0):
        raise ValueError("x_list must be sorted positive masses")
    rate = 0.0 if mech.pi.is_zero else mech.pi.tail(eps_sim)
    if dt_pop * (abs(fn.theta) + rate) >= 0.1:
        raise ValueError(f"dt_pop*(|theta| + jump rate) = {dt_pop * (abs(fn.theta) + rate):.3g} must be < 0.1")
    steps = int(round(horizon / dt_pop))
    if record_times is None:
        record_times = [horizon]
    rec_idx = np.rint(np.asarray(record_times, dtype=float) / dt_pop).astype(np.int64)
    if np.any(np.diff(rec_idx) < 0) or rec_idx.max() > steps or rec_idx.min() < 0:
        raise ValueError("record_times must be sorted inside [0, horizon]")
    outs, absorbed = [], []
    for blk, start in enumerate(range(0, n_paths, BLOCK)):
        n = min(BLOCK, n_paths - start)
        rng = make_rng(seed_split(seed, leg, blk))
        o, a = _block(fn, mech, x_list, steps, rec_idx, dt_pop, eps_sim, rng, n, small_jump_gauss)
        outs.append(o)
        absorbed.append(a)
    return PopulationPath(dt_pop, x_list, rec_idx * dt_pop, np.concatenate(outs, axis=1),
                          np.concatenate(absorbed, axis=0),
                          {"seed": seed, "leg": leg, "eps_sim": eps_sim, "n_paths": n_paths})


def laplace_ode(mech: Mechanism, lam: float, t: float) -> float:
    """``u_t`` solving ``u' = -psi(u)``, ``u_0 = lam`` (so ``E exp(-lam Z_t) = exp(-x u_t)``)."""
    sol = integrate.solve_ivp(lambda _, u: [-psi(mech, max(u[0], 0.0))], (0.0, t), [lam],
                              rtol=1e-10, atol=1e-12)
    return float(sol.y[0, -1])


def increment_law_check(fn: InteractionFn, mech: Mechanism, x: float, y: float, t: float, n_paths: int,
                        dt_pop: float, eps_sim: float, seed) -> dict:
    """Joint law of ``(Z^x_t, Z^{x+y}_t - Z^x_t)`` against a lone population started at ``y``.

    Reports the increment moments, the least-squares slope of the increment
    on ``Z^x`` with its standard error, and the mean of the lone population.
    """
    if x <= 0 or y < 0:
        raise ValueError("need x > 0 and y >= 0")
    if y == 0:
        pp = simulate_csbp(fn, mech, [x], t, dt_pop, eps_sim, seed, n_paths)
        zx = pp.at(t)[:, 0]
        return {"inc_mean": 0.0, "inc_var": 0.0, "slope": 0.0, "slope_se": 0.0,
                "zx_mean": float(zx.mean()), "lone_mean": 0.0, "lone_se": 0.0, "inc_se": 0.0}
    pp = simulate_csbp(fn, mech, [x, x + y], t, dt_pop, eps_sim, seed, n_paths)
    v = pp.increments[-1]
    zx, inc = v[:, 0], v[:, 1]
    lone = simulate_csbp(fn, mech, [y], t, dt_pop, eps_sim, seed, n_paths, leg=7).at(t)[:, 0]
    xc = zx - zx.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ (inc - inc.mean()) / sxx) if sxx > 0 else 0.0
    resid = inc - inc.mean() - slope * xc
    slope_se = float(math.sqrt(resid @ resid / max(n_paths - 2, 1) / sxx)) if sxx > 0 else math.inf
    return {
        "inc_mean": float(inc.mean()),
        "inc_var": float(inc.var(ddof=1)),
        "inc_se": float(inc.std(ddof=1) / math.sqrt(n_paths)),
        "slope": slope,
        "slope_se": slope_se,
        "zx_mean": float(zx.mean()),
        "lone_mean": float(lone.mean()),
        "lone_se": float(lone.std(ddof=1) / math.sqrt(n_paths)),
    }
