"""Statistical harness: two-sample tests, bound checks and the end-to-end
comparisons between level-indexed local times and population processes.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels as K
from .csbp import simulate_csbp
from .engine import run_engine, step_inputs
from .height import jump_clamps
from .interact import InteractConfig, run_interacting, simulate_reference
from .levypath import PathBudget, simulate_levy
from .loctime import level_value
from .mechanism import InteractionFn, Mechanism
from .seeding import make_rng, seed_split

FLUCT_C = 1.0 / (1.0 - math.exp(-1.0))

LEG_HEIGHT, LEG_POP, LEG_PERM, LEG_REF = 0, 1, 2, 3


class InsufficientReached(RuntimeError):
    """Too few replicates reached ``S_x`` within the budget."""


# ---------------------------------------------------------------- summaries


@dataclass
class EnsembleSummary:
    mean: float
    variance: float
    stderr: float
    count: int
    grid: list
    cdf: list
    meta: dict = field(default_factory=dict)


def summarize(sample, grid=None, meta=None) -> EnsembleSummary:
    x = np.asarray(sample, dtype=float)
    if x.size == 0:
        raise ValueError("empty sample")
    if grid is None:
        grid = np.quantile(x, np.linspace(0, 1, 21))
    grid = np.asarray(grid, dtype=float)
    cdf = np.searchsorted(np.sort(x), grid, side="right") / x.size
    var = float(x.var(ddof=1)) if x.size > 1 else 0.0
    return EnsembleSummary(float(x.mean()), var, math.sqrt(var / x.size), int(x.size),
                           grid.tolist(), cdf.tolist(), dict(meta or {}))


def ks_statistic(a, b) -> float:
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_two_sample(sample_a, sample_b, n_permutations: int = 200, seed: int = 0):
    """KS distance with a permutation p-value ``(1 + #{D_perm >= D}) / (1 + n_perm)``.

    The pooled sample is put in sorted order and the smaller group is always
    drawn first, so the p-value does not depend on which ensemble is called
    ``a``.
    """
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    d = ks_statistic(a, b)
    if n_permutations <= 0:
        return d, math.nan
    pooled = np.sort(np.concatenate([a, b]))
    m = min(a.size, b.size)
    rng = make_rng(seed_split(seed, LEG_PERM, 0))
    hits = 0
    for _ in range(n_permutations):
        perm = pooled[rng.permutation(pooled.size)]
        if ks_statistic(perm[:m], perm[m:]) >= d - 1e-12:
            hits += 1
    return d, (1 + hits) / (1 + n_permutations)


@dataclass
class Coordinate:
    name: str
    ks: float
    p_value: float
    mean_a: float
    mean_b: float
    se_a: float
    se_b: float
    z: float
    allowance: float
    ks_tol: float
    pass_mean: bool
    pass_ks: bool

    @property
    def passed(self):
        return self.pass_mean and self.pass_ks


@dataclass
class ComparisonReport:
    title: str
    coordinates: list
    provenance: dict
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.coordinates)

    def to_dict(self) -> dict:
        return {"title": self.title, "passed": self.passed,
                "coordinates": [dict(asdict(c), passed=c.passed) for c in self.coordinates],
                "provenance": self.provenance, "notes": self.notes}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=_jsonable)

    def to_text(self) -> str:
        head = f"{'coordinate':<28}{'mean A':>10}{'mean B':>10}{'z':>8}{'KS':>8}{'p':>8}  pass"
        rows = [self.title, head]
        for c in self.coordinates:
            rows.append(f"{c.name:<28}{c.mean_a:>10.4f}{c.mean_b:>10.4f}{c.z:>8.2f}{c.ks:>8.4f}"
                        f"{c.p_value:>8.3f}  {'yes' if c.passed else 'NO'}")
        rows.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(rows)


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def compare(name, a, b, allowance, ks_tol, n_perm=0, seed=0, ref_mean=None) -> Coordinate:
    """Mean clause ``|mean_a - mean_b| <= 3 se + allowance`` and ``KS < ks_tol``.

    With ``ref_mean`` given, ``b`` is ignored and the mean of ``a`` is compared
    to that constant (KS clause skipped).
    """
    a = np.asarray(a, dtype=float)
    ma, sa = float(a.mean()), float(a.std(ddof=1) / math.sqrt(a.size))
    if ref_mean is not None:
        diff = abs(ma - ref_mean)
        return Coordinate(name, math.nan, math.nan, ma, float(ref_mean), sa, 0.0,
                          diff / sa if sa > 0 else (0.0 if diff == 0 else math.inf), allowance, ks_tol,
                          diff <= 3 * sa + allowance, True)
    b = np.asarray(b, dtype=float)
    mb, sb = float(b.mean()), float(b.std(ddof=1) / math.sqrt(b.size))
    se = math.hypot(sa, sb)
    diff = abs(ma - mb)
    d, p = ks_two_sample(a, b, n_perm, seed) if n_perm else (ks_statistic(a, b), math.nan)
    z = diff / se if se > 0 else (0.0 if diff == 0 else math.inf)
    return Coordinate(name, d, p, ma, mb, sa, sb, z, allowance, ks_tol, diff <= 3 * se + allowance, d < ks_tol)


# ---------------------------------------------------------------- ensembles


def default_workers() -> int:
    return max(1, int(os.environ.get("HEIGHTLAB_WORKERS", "1")))


def _map_blocks(func, n: int, args: tuple, workers: int, block: int = 250):
    """Evaluate ``func(*args, r0, r1)`` over replicate blocks; results merged in replicate order."""
    ranges = [(r0, min(n, r0 + block)) for r0 in range(0, n, block)]
    if workers <= 1 or len(ranges) == 1:
        parts = [func(*args, r0, r1) for r0, r1 in ranges]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            futs = [ex.submit(func, *args, r0, r1) for r0, r1 in ranges]
            parts = [f.result() for f in futs]
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


def _height_block(mech, x_list, levels, dt, eps_sim, delta, cap_steps, seed, r0, r1):
    n, nx, nl = r1 - r0, len(x_list), len(levels)
    reached = np.zeros(n, dtype=bool)
    sx = np.full((n, nx), np.nan)
    hmax = np.full((n, nx), np.nan)
    vals = np.full((n, nx, nl), np.nan)
    for i, r in enumerate(range(r0, r1)):
        res = run_engine(mech, make_rng(seed_split(seed, LEG_HEIGHT, r)), dt=dt, eps_sim=eps_sim,
                         cap_steps=cap_steps, targets=x_list, delta=delta)
        reached[i] = res.stopped
        sx[i] = res.pass_time
        hmax[i] = res.pass_hmax
        if res.stopped:
            for j in range(nx):
                vals[i, j] = level_value(res.snaps[j] * (dt / delta), delta, levels)
    return {"reached": reached, "sx": sx, "hmax": hmax, "vals": vals}


def _interacting_block(cfg, x_list, levels, seed, r0, r1):
    n, nx, nl = r1 - r0, len(x_list), len(levels)
    reached = np.zeros(n, dtype=bool)
    sx = np.full((n, nx), np.nan)
    hmax = np.full((n, nx), np.nan)
    vals = np.full((n, nx, nl), np.nan)
    chigh = np.full(n, -np.inf)
    for i, r in enumerate(range(r0, r1)):
        res = run_interacting(cfg, seed_split(seed, LEG_HEIGHT, r), record=False, targets=x_list)
        reached[i] = res.stopped
        sx[i] = res.pass_time
        hmax[i] = res.pass_hmax
        chigh[i] = res.c_high
        if res.stopped:
            for j in range(nx):
                vals[i, j] = level_value(res.snaps[j] * (cfg.dt / cfg.delta_t), cfg.delta_t, levels)
    return {"reached": reached, "sx": sx, "hmax": hmax, "vals": vals, "c_high": chigh}


def height_ensemble(mech: Mechanism, x_list, levels, n: int, dt: float, eps_sim: float, delta: float,
                    seed: int, cap: float = 1e3, workers: int = 1) -> dict:
    """Per replicate: ``S_x``, ``max H`` before ``S_x`` and ``L^t(S_x)`` at the given levels."""
    cap_steps = PathBudget(x_target=max(x_list), cap=cap).steps(dt)
    return _map_blocks(_height_block, n, (mech, list(x_list), np.asarray(levels, float), dt, eps_sim, delta,
                                           cap_steps, seed), workers)


def interacting_ensemble(cfg: InteractConfig, x_list, levels, n: int, seed: int, workers: int = 1) -> dict:
    return _map_blocks(_interacting_block, n, (cfg, list(x_list), np.asarray(levels, float), seed), workers)


def _check_reached(reached, n, label):
    frac = float(np.mean(reached))
    if frac < 0.9:
        raise InsufficientReached(f"{label}: only {frac:.1%} of {n} replicates reached S_x (need 90%)")
    return frac


# ---------------------------------------------------------------- Ray-Knight checks


def ray_knight_linear(mech: Mechanism, x: float, levels, n: int, dt: float, eps_sim: float, delta: float,
                      seed: int, dt_pop: float = 1e-3, cap: float = 1e3, allowance: float = 0.05,
                      ks_tol: float = 0.05, n_perm: int = 0, workers: int = 1) -> ComparisonReport:
    """Local times at ``S_x`` against the population ``Z^x`` with ``f(z) = -alpha z``.

    Each level ``t`` gives one coordinate comparing ``L^t(S_x)`` (height leg)
    with ``Z^x_t`` (population leg), plus a closed-form mean coordinate
    ``x exp(-alpha t)``.
    """
    if mech.alpha < 0:
        raise ValueError("the linear comparison needs alpha >= 0")
    levels = np.asarray(levels, dtype=float)
    a = height_ensemble(mech, [x], levels, n, dt, eps_sim, delta, seed, cap, workers)
    frac = _check_reached(a["reached"], n, "height leg")
    ok = a["reached"]
    pop = simulate_csbp(InteractionFn.linear(mech.alpha), mech, [x], float(levels.max()), dt_pop, eps_sim,
                        seed, n, record_times=levels, leg=LEG_POP)
    coords = []
    for li, t in enumerate(levels):
        la = a["vals"][ok, 0, li]
        zb = pop.increments[li, :, 0]
        coords.append(compare(f"L^{t:g}(S_{x:g}) vs Z_{t:g}", la, zb, allowance, ks_tol, n_perm, seed + li))
        coords.append(compare(f"mean L^{t:g} vs x e^(-alpha t)", la, None, allowance, ks_tol,
                              ref_mean=x * math.exp(-mech.alpha * t)))
    prov = {"mechanism": mech.describe(), "x": x, "levels": levels.tolist(), "N": n, "dt": dt,
            "eps_sim": eps_sim, "delta_t": delta, "dt_pop": dt_pop, "seed": seed, "cap": cap,
            "reached_fraction": frac, "allowance": allowance, "ks_tol": ks_tol}
    return ComparisonReport("linear local-time field vs population", coords, prov)


def ray_knight_interacting(cfg: InteractConfig, x_list, levels, n: int, seed: int, dt_pop: float = 1e-3,
                           allowance: float = 0.07, ks_tol: float = 0.07, n_perm: int = 0,
                           workers: int = 1) -> ComparisonReport:
    """Interacting height local times against the population driven by ``f_b``.

    Marginals ``L^t(S_{x_i})`` vs ``Z^{x_i}_t`` and, for consecutive masses,
    increments ``L^t(S_{x_i}) - L^t(S_{x_{i-1}})`` vs ``Z^{x_i}_t - Z^{x_{i-1}}_t``.
    """
    levels = np.asarray(levels, dtype=float)
    x_list = [float(v) for v in x_list]
    if np.any(levels > cfg.a):
        raise ValueError("levels must not exceed the reflection level a")
    a = interacting_ensemble(cfg, x_list, levels, n, seed, workers)
    frac = _check_reached(a["reached"], n, "interacting height leg")
    ok = a["reached"]
    mech = cfg.mechanism
    pop = simulate_csbp(cfg.f, mech, x_list, float(levels.max()), dt_pop, cfg.eps_sim, seed, n,
                        record_times=levels, leg=LEG_POP)
    zb = pop.Z
    coords = []
    for li, t in enumerate(levels):
        for j, x in enumerate(x_list):
            coords.append(compare(f"L^{t:g}(S_{x:g}) vs Z^{x:g}_{t:g}", a["vals"][ok, j, li], zb[li, :, j],
                                  allowance, ks_tol, n_perm, seed + 10 * li + j))
        for j in range(1, len(x_list)):
            inc_a = a["vals"][ok, j, li] - a["vals"][ok, j - 1, li]
            inc_b = pop.increments[li, :, j]
            coords.append(compare(f"increment ({x_list[j-1]:g},{x_list[j]:g}] at t={t:g}", inc_a, inc_b,
                                  allowance, ks_tol, n_perm, seed + 100 + li))
    prov = {"f": cfg.f.describe(), "a": cfg.a, "beta": cfg.beta, "pi": cfg.pi.describe(), "x_list": x_list,
            "levels": levels.tolist(), "N": n, "dt": cfg.dt, "eps_sim": cfg.eps_sim, "delta_t": cfg.delta_t,
            "dt_pop": dt_pop, "seed": seed, "cap": cfg.cap, "reached_fraction": frac,
            "max_drift_above_threshold": float(np.max(a["c_high"])), "allowance": allowance, "ks_tol": ks_tol}
    return ComparisonReport("interacting local-time field vs population", coords, prov)


# ---------------------------------------------------------------- Girsanov


def _girsanov_block(cfg, phis, seed, r0, r1):
    n = r1 - r0
    w = np.empty(n)
    ref_vals = np.empty((n, len(phis)))
    dir_vals = np.empty((n, len(phis)))
    for i, r in enumerate(range(r0, r1)):
        b = simulate_reference(cfg, seed_split(seed, LEG_REF, r))
        w[i] = math.exp(b.engine_log_weight)
        ref_vals[i] = [phi(b.passage.time, b.height.values[: (b.passage.index if b.passage.reached else None)],
                           b.passage.reached) for phi in phis]
        d = run_interacting(cfg, seed_split(seed, LEG_HEIGHT, r), record=True)
        dir_vals[i] = [phi(d.passage.time, d.height.values[: (d.passage.index if d.passage.reached else None)],
                           d.passage.reached) for phi in phis]
    return {"w": w, "ref": ref_vals, "direct": dir_vals}


class PhiMaxHeight:
    """Picklable ``1{reached and max H > level}``."""

    def __init__(self, level):
        self.level = level

    def __call__(self, sx, h, reached):
        return float(reached and h.max() > self.level)

    def __repr__(self):
        return f"1{{max H > {self.level:g}}}"


class PhiExpSx:
    def __call__(self, sx, h, reached):
        return math.exp(-sx) if reached else 0.0

    def __repr__(self):
        return "exp(-S_x)"


def girsanov_check(cfg: InteractConfig, n: int, seed: int, phis=None, workers: int = 1) -> ComparisonReport:
    """Mean weight against 1, and weighted reference estimates against direct simulation."""
    if phis is None:
        phis = [PhiMaxHeight(0.5), PhiMaxHeight(1.0), PhiExpSx()]
    out = _map_blocks(_girsanov_block, n, (cfg, phis, seed), workers, block=500)
    w = out["w"]
    coords = [compare("mean weight vs 1", w, None, 0.0, 1.0, ref_mean=1.0)]
    for j, phi in enumerate(phis):
        coords.append(_weighted_compare(repr(phi), w * out["ref"][:, j], out["direct"][:, j]))
    prov = {"f": cfg.f.describe(), "a": cfg.a, "beta": cfg.beta, "pi": cfg.pi.describe(), "x": cfg.x_target,
            "N": n, "dt": cfg.dt, "delta_t": cfg.delta_t, "seed": seed, "cap": cfg.cap,
            "weight_max": float(w.max()), "weight_ess": float(w.sum() ** 2 / (w @ w))}
    return ComparisonReport("Girsanov reweighting vs direct interacting simulation", coords, prov)


def _weighted_compare(name, wa, b):
    ma, sa = float(wa.mean()), float(wa.std(ddof=1) / math.sqrt(wa.size))
    mb, sb = float(b.mean()), float(b.std(ddof=1) / math.sqrt(b.size))
    se = math.hypot(sa, sb)
    z = abs(ma - mb) / se if se > 0 else 0.0
    return Coordinate(name, math.nan, math.nan, ma, mb, sa, sb, z, 0.0, 1.0, z <= 3.0, True)


# ---------------------------------------------------------------- bounds


@dataclass
class BoundCheck:
    kind: str
    params: dict
    empirical: float
    stderr: float
    bound: float

    @property
    def passed(self) -> bool:
        return self.empirical <= self.bound + 3.0 * self.stderr


def fluctuation_bound(x: float, s: float, beta: float) -> float:
    return min(FLUCT_C * x / math.sqrt(beta * s), 1.0)


def clamp_moment_bound(z: float, s: float, beta: float) -> float:
    return min(FLUCT_C * z * z / (2.0 * math.sqrt(beta * s)), z)


def clamp_mass_bound(mech: Mechanism, s: float, lo: float, hi: float) -> float:
    cs = max(FLUCT_C * math.sqrt(s / mech.beta), s)
    pi = mech.pi
    if pi.is_zero:
        return 0.0
    # int_(lo,hi] (z ^ z^2) pi(dz)
    mass = pi.moment(2, lo, min(hi, 1.0)) if lo < 1.0 else 0.0
    mass += pi.moment(1, max(lo, 1.0), hi) if hi > 1.0 else 0.0
    return cs * mass


def _bound_block(mech, s_list, x_list, z_list, ranges, dt, eps_sim, seed, r0, r1):
    horizon = max(s_list)
    n = r1 - r0
    inf_x = np.empty((n, len(s_list)))
    clamp = np.empty((n, len(s_list), len(ranges)))
    for i, r in enumerate(range(r0, r1)):
        path = simulate_levy(mech, PathBudget(horizon=horizon), dt, eps_sim, seed_split(seed, LEG_HEIGHT, r))
        run = path.running_inf()
        for si, s in enumerate(s_list):
            k = int(round(s / dt))
            inf_x[i, si] = run[k]
            if path.jump_size.size and ranges:
                cl = jump_clamps(path, k)
                for ri, (lo, hi) in enumerate(ranges):
                    sel = (path.jump_size > lo) & (path.jump_size <= hi)
                    clamp[i, si, ri] = cl[sel].sum()
            else:
                clamp[i, si, :] = 0.0
    return {"inf": inf_x, "clamp": clamp}


def bound_suite(mech: Mechanism, s_list, x_list, z_list, n: int, seed: int, dt: float = 1e-3,
                eps_sim: float = 0.01, ranges=None, workers: int = 1) -> list:
    """One-sided checks of the fluctuation, clamp-moment and clamp-mass bounds."""
    if mech.alpha < 0:
        raise ValueError("bounds assume alpha >= 0")
    if ranges is None:
        ranges = [] if mech.pi.is_zero else [(eps_sim, math.inf)]
    out = _map_blocks(_bound_block, n, (mech, list(s_list), list(x_list), list(z_list), list(ranges), dt,
                                        eps_sim, seed), workers, block=500)
    checks = []
    for si, s in enumerate(s_list):
        neg_inf = -out["inf"][:, si]
        for x in x_list:
            ind = (neg_inf <= x).astype(float)
            checks.append(BoundCheck("fluctuation", {"s": s, "x": x}, float(ind.mean()),
                                     float(ind.std(ddof=1) / math.sqrt(n)), fluctuation_bound(x, s, mech.beta)))
        for z in z_list:
            v = np.maximum(z + out["inf"][:, si], 0.0)
            checks.append(BoundCheck("clamp_moment", {"s": s, "z": z}, float(v.mean()),
                                     float(v.std(ddof=1) / math.sqrt(n)), clamp_moment_bound(z, s, mech.beta)))
        for ri, (lo, hi) in enumerate(ranges):
            v = out["clamp"][:, si, ri]
            checks.append(BoundCheck("clamp_mass", {"s": s, "lo": lo, "hi": hi}, float(v.mean()),
                                     float(v.std(ddof=1) / math.sqrt(n)), clamp_mass_bound(mech, s, lo, hi)))
    return checks


# ---------------------------------------------------------------- compensation identity


def _comp_block(mech, s, lo, hi, dt, eps_sim, grid_y, grid_g, seed, r0, r1):
    n = r1 - r0
    lhs = np.empty(n)
    rhs = np.empty(n)
    k = int(round(s / dt))
    for i, r in enumerate(range(r0, r1)):
        path = simulate_levy(mech, PathBudget(horizon=s), dt, eps_sim, seed_split(seed, LEG_HEIGHT, r))
        if path.jump_size.size:
            cl = jump_clamps(path, k)
            sel = (path.jump_size > lo) & (path.jump_size <= hi)
            lhs[i] = cl[sel].sum()
        else:
            lhs[i] = 0.0
        run = path.running_inf()[:k]  # left-point Riemann sum over [0, s)
        rhs[i] = dt * np.interp(run, grid_y, grid_g).sum()
    return {"lhs": lhs, "rhs": rhs}


def _clamp_integrand(mech: Mechanism, lo: float, hi: float, y_min: float, n: int = 801):
    """``G(y) = int_(lo,hi] (z + y)^+ pi(dz)`` on a grid of ``y <= 0``."""
    ys = np.linspace(min(y_min, -1e-9), 0.0, n)
    g = np.empty(n)
    for i, y in enumerate(ys):
        start = max(lo, -y)
        if start >= hi:
            g[i] = 0.0
        else:
            g[i] = mech.pi.moment(1, start, hi) + y * (mech.pi.tail(start) - mech.pi.tail(hi))
    return ys, g


def compensation_identity(mech: Mechanism, s: float, lo: float, hi: float, n: int, dt: float, eps_sim: float,
                          seed: int, workers: int = 1) -> dict:
    """Both sides of ``E sum clamps = E int_0^s int_(lo,hi] (z + inf_{u<=r} X_u)^+ pi(dz) dr``.

    Returns means, standard errors and 95% intervals of both sides.
    """
    if lo < eps_sim and not mech.pi.is_zero and not mech.pi.tail(lo) - mech.pi.tail(eps_sim) <= 0.0:
        raise ValueError("the lower size bound must not be below eps_sim (smaller jumps are not simulated)")
    ys, gs = _clamp_integrand(mech, lo, hi, -20.0)
    out = _map_blocks(_comp_block, n, (mech, s, lo, hi, dt, eps_sim, ys, gs, seed), workers, block=500)
    res = {}
    for side in ("lhs", "rhs"):
        v = out[side]
        m, se = float(v.mean()), float(v.std(ddof=1) / math.sqrt(n))
        res[side] = {"mean": m, "stderr": se, "ci95": [m - 1.96 * se, m + 1.96 * se]}
    lo_ci = max(res["lhs"]["ci95"][0], res["rhs"]["ci95"][0])
    hi_ci = min(res["lhs"]["ci95"][1], res["rhs"]["ci95"][1])
    res["overlap"] = lo_ci <= hi_ci
    return res


# ---------------------------------------------------------------- first passage


def _passage_block(mech, x_list, dt, eps_sim, cap_steps, seed, r0, r1):
    n = r1 - r0
    t = np.full((n, len(x_list)), np.inf)
    for i, r in enumerate(range(r0, r1)):
        res = run_engine(mech, make_rng(seed_split(seed, LEG_HEIGHT, r)), dt=dt, eps_sim=eps_sim,
                         cap_steps=cap_steps, targets=x_list)
        ok = res.pass_index >= 0
        t[i, ok] = res.pass_time[ok]
    return {"t": t}


def passage_laplace(mech: Mechanism, x_list, n: int, dt: float, eps_sim: float, seed: int, cap: float = 200.0,
                    workers: int = 1) -> list:
    """``E exp(-S_x)`` against ``exp(-x Phi(1))``; unreached paths contribute at most ``exp(-cap)``."""
    from .mechanism import phi

    cap_steps = PathBudget(x_target=max(x_list), cap=cap).steps(dt)
    out = _map_blocks(_passage_block, n, (mech, list(x_list), dt, eps_sim, cap_steps, seed), workers, block=500)
    rows = []
    for j, x in enumerate(x_list):
        e = np.exp(-out["t"][:, j])
        rows.append({"x": x, "empirical": float(e.mean()), "stderr": float(e.std(ddof=1) / math.sqrt(n)),
                     "target": math.exp(-x * phi(mech, 1.0)),
                     "reached_fraction": float(np.isfinite(out["t"][:, j]).mean())})
    return rows


# ---------------------------------------------------------------- truncation


def _trunc_block(mech, eps_list, eps_ref, s, dt, x_pass, seed, r0, r1):
    pi = mech.pi
    steps = int(round(s / dt))
    n = r1 - r0
    nq = len(eps_list)
    sup = np.zeros((n, nq))
    hit = np.full((n, nq), np.inf)
    sq = math.sqrt(2.0 * mech.beta * dt)
    rate_ref = 0.0 if pi.is_zero else pi.tail(eps_ref)
    sd_ref = 0.0 if pi.is_zero else math.sqrt(dt * pi.moment(2, 0.0, eps_ref))
    big = np.array([0.0 if pi.is_zero else pi.moment(1, e, math.inf) for e in eps_list])
    comps = np.array([0.0 if pi.is_zero else pi.moment(1, eps_ref, e) for e in eps_list])
    for i, r in enumerate(range(r0, r1)):
        rng = make_rng(seed_split(seed, LEG_HEIGHT, r))
        bm = sq * rng.standard_normal(steps)
        counts = rng.poisson(rate_ref * dt, steps) if rate_ref > 0 else np.zeros(steps, dtype=np.int64)
        sizes = pi.sample(rng, int(counts.sum()), eps_ref) if rate_ref > 0 else np.empty(0)
        step_of = np.repeat(np.arange(steps), counts)
        gauss = sd_ref * rng.standard_normal(steps) if rate_ref > 0 else np.zeros(steps)
        for q, e in enumerate(eps_list):
            small = sizes <= e
            inc = np.zeros(steps)
            np.add.at(inc, step_of[small], sizes[small])
            if rate_ref > 0:
                sup[i, q] = np.max(np.abs(np.cumsum(inc - comps[q] * dt + gauss)))
            # truncated process X^eps: Brownian part plus compensated jumps above eps
            inc_big = np.zeros(steps)
            np.add.at(inc_big, step_of[~small], sizes[~small])
            xk = np.cumsum(bm - (mech.alpha + big[q]) * dt + inc_big)
            below = np.flatnonzero(xk <= -x_pass)
            if below.size:
                hit[i, q] = (below[0] + 1) * dt
    return {"sup": sup, "hit": hit}


def truncation_convergence(mech: Mechanism, eps_schedule, s: float, n: int, seed: int, dt: float = 1e-3,
                           eps_ref: float | None = None, x_pass: float = 0.5, workers: int = 1) -> dict:
    """``E sup_{r<=s} |X - X^eps|`` along a decreasing truncation schedule.

    ``X - X^eps`` is the compensated sum of jumps of size at most ``eps``.
    Jumps above ``eps_ref`` are simulated exactly and shared by all levels of
    the schedule; the remainder below ``eps_ref`` is a matched Gaussian. The
    first passage of each truncated process below ``-x_pass`` is also
    reported as ``P(S^eps <= s)`` and ``E min(S^eps, s)``.
    """
    eps = [float(e) for e in eps_schedule]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("eps schedule must be strictly decreasing")
    if eps_ref is None:
        eps_ref = eps[-1] / 10.0
    out = _map_blocks(_trunc_block, n, (mech, eps, eps_ref, s, dt, x_pass, seed), workers, block=500)
    sup = out["sup"]
    means = sup.mean(axis=0)
    ses = sup.std(ddof=1, axis=0) / math.sqrt(n)
    env = [0.0 if mech.pi.is_zero else 2.0 * math.sqrt(s * mech.pi.moment(2, 0.0, e)) for e in eps]
    diffs = sup[:, 1:] - sup[:, :-1]
    diff_se = diffs.std(ddof=1, axis=0) / math.sqrt(n) if n > 1 else np.zeros(len(eps) - 1)
    decreasing = bool(np.all(diffs.mean(axis=0) <= 3.0 * diff_se))
    within = bool(np.all(means <= np.asarray(env) + 3.0 * ses))
    hit = out["hit"]
    return {"eps": eps, "mean_sup": means.tolist(), "stderr": ses.tolist(), "envelope": env,
            "decreasing": decreasing, "within_envelope": within, "passed": decreasing and within,
            "passage_prob": np.isfinite(hit).mean(axis=0).tolist(),
            "passage_mean_capped": np.minimum(hit, s).mean(axis=0).tolist(), "x_pass": x_pass,
            "eps_ref": eps_ref, "N": n, "s": s, "dt": dt, "seed": seed}


# ---------------------------------------------------------------- injection construction


def _inject_block(mech, x, dt, seed, r0, r1):
    from .height import height_from_path
    from .levypath import inject_construct

    n = r1 - r0
    sx = np.full(n, np.nan)
    hmax = np.full(n, np.nan)
    for i, r in enumerate(range(r0, r1)):
        path = inject_construct(mech, x, dt, seed_split(seed, LEG_REF, r))
        if path.passage is None:
            continue
        k = path.passage[1]
        sx[i] = path.passage[2]
        hmax[i] = height_from_path(path, mech.beta).values[:k].max()
    return {"sx": sx, "hmax": hmax}


def injection_check(mech: Mechanism, x: float, n: int, dt: float, seed: int, cap: float = 1e3,
                    ks_tol: float = 0.07, workers: int = 1) -> ComparisonReport:
    """``(S_x, max H)`` from recursive excursion injection against the direct pipeline."""
    if not np.isfinite(mech.pi.total_mass() if not mech.pi.is_zero else 0.0):
        raise ValueError("injection needs a finite Lévy measure")
    eps_sim = 1e-9 if mech.pi.is_zero else float(getattr(mech.pi, "sizes", np.array([1.0])).min()) / 2
    a = height_ensemble(mech, [x], [0.0], n, dt, eps_sim, 0.02, seed, cap, workers)
    frac = _check_reached(a["reached"], n, "direct leg")
    b = _map_blocks(_inject_block, n, (mech, x, dt, seed), workers)
    ok = a["reached"]
    coords = [compare("S_x", a["sx"][ok, 0], b["sx"], math.inf, ks_tol),
              compare("max H before S_x", a["hmax"][ok, 0], b["hmax"], math.inf, ks_tol)]
    prov = {"mechanism": mech.describe(), "x": x, "N": n, "dt": dt, "seed": seed, "cap": cap,
            "reached_fraction": frac, "ks_tol": ks_tol}
    return ComparisonReport("injection construction vs direct simulation", coords, prov)
