"""Acceptance criteria, run at full size.

Each test records one PASS/FAIL line, listed again in the terminal summary.
Set HEIGHTLAB_WORKERS to spread the ensembles over several processes; the
numbers do not depend on it.
"""
import json
import math
import time

import numpy as np
import pytest

from heightlab import (Extinction, FiniteAtoms, InteractionFn, Mechanism, TruncatedStable, extinction_criterion)
from heightlab.cli import main, replay_matches
from heightlab.height import height_brute_force, height_from_path
from heightlab.interact import InteractConfig
from heightlab.levypath import PathBudget, simulate_levy
from heightlab.loctime import local_time_occupation, local_time_tanaka
from heightlab.seeding import seed_split
from heightlab.verify import (bound_suite, compensation_identity, default_workers, girsanov_check,
                              injection_check, passage_laplace, ray_knight_interacting, ray_knight_linear,
                              truncation_convergence)

from conftest import stick_path

W = default_workers()
ATOM = FiniteAtoms([(1.0, 0.5)])
STABLE = TruncatedStable(1.5, 0.5, 5.0)


class Clock:
    def __init__(self, budget):
        self.budget = budget
        self.t0 = time.perf_counter()

    @property
    def elapsed(self):
        return time.perf_counter() - self.t0

    @property
    def ok(self):
        return self.elapsed < self.budget

    def __str__(self):
        return f"{self.elapsed:.1f}s (budget {self.budget:g}s)"


def test_c01_exploration_stack(verdict):
    clock = Clock(10)
    mech = Mechanism(0.2, 1.0, FiniteAtoms([(1.0, 1.0), (0.3, 3.0), (2.0, 0.5)]))
    worst, jumps = 0.0, 0
    for r in range(100):
        p = simulate_levy(mech, PathBudget(horizon=2.0), 1e-3, 0.01, seed_split(1, 0, r))
        assert p.n_steps == 2000
        jumps += p.jump_size.size
        worst = max(worst, float(np.max(np.abs(height_from_path(p, 1.0).values - height_brute_force(p, 1.0).values))))
    stick = height_from_path(stick_path(), 1.0).values
    stick_ok = (np.allclose(stick[101:150], 1.0, atol=1e-12) and abs(stick[200] - 0.5) < 1e-12
                and abs(stick[300]) < 1e-12)
    ok = worst < 1e-8 and stick_ok and jumps > 100 and clock.ok
    assert verdict("C1 exploration stack", ok, f"max |fast - brute| = {worst:.2e} over 100 paths "
                   f"({jumps} jumps), stick path {'exact' if stick_ok else 'WRONG'}, {clock}")


def test_c02_reflected_identity(verdict):
    clock = Clock(5)
    worst = 0.0
    for r in range(50):
        for beta in (1.0, 0.5, 2.0):
            p = simulate_levy(Mechanism(0.3, beta), PathBudget(horizon=2.0), 1e-3, 0.01, seed_split(2, 0, r))
            h = height_from_path(p, beta).values
            refl = p.values - np.minimum.accumulate(p.values)
            scale = np.maximum(np.abs(refl), np.abs(p.values)) + 1.0
            worst = max(worst, float(np.max(np.abs(beta * h - refl) / scale)))
    ok = worst <= 4 * np.finfo(float).eps and clock.ok
    assert verdict("C2 reflected identity", ok, f"max relative gap {worst:.1e} on 150 paths, {clock}")


def _tanaka_queries(mech, seed, nq):
    rng = np.random.default_rng(seed)
    dev, zero_gap = [], 0.0
    for q in range(nq):
        p = simulate_levy(mech, PathBudget(horizon=1.0), 1e-4, 0.01, seed_split(seed, 0, q))
        h = height_from_path(p, mech.beta)
        s = rng.uniform(0.1, 1.0)
        k = int(round(s / p.dt))
        s = k * p.dt
        t = rng.uniform(0.0, h.values[: k + 1].max())
        field = local_time_occupation(h, 0.02, [s])
        dev.append(abs(local_time_tanaka(p, h, t, s) - field.at_level(t, 0)))
        inf = np.minimum.accumulate(p.pre_values())[k]
        zero_gap = max(zero_gap, abs(local_time_tanaka(p, h, 0.0, s) + inf))
    return np.array(dev), zero_gap


def test_c03_tanaka_vs_occupation(verdict):
    clock = Clock(120)
    d0, g0 = _tanaka_queries(Mechanism(0.0, 1.0), 31, 100)
    d1, g1 = _tanaka_queries(Mechanism(0.2, 1.0, ATOM), 32, 100)
    dev = np.concatenate([d0, d1])
    mad0, mad1 = float(d0.mean()), float(d1.mean())
    zero_exact = max(g0, g1) <= 1e-12
    ok = mad0 < 0.1 and mad1 < 0.1 and zero_exact and clock.ok
    assert verdict("C3 Tanaka vs occupation", ok,
                   f"mean |diff| {mad0:.3f} (pi=0), {mad1:.3f} (atom); max {dev.max():.3f}, "
                   f"{np.mean(dev >= 0.1):.0%} of queries >= 0.1; t=0 gap {max(g0, g1):.1e}; {clock}")


@pytest.mark.parametrize("label,pi,lo,hi", [
    ("atom (0,inf)", ATOM, 0.0, math.inf),
    ("stable (0.01,inf)", STABLE, 0.01, math.inf),
    ("stable (0.2,1]", STABLE, 0.2, 1.0),
])
def test_c04_compensation_identity(verdict, label, pi, lo, hi):
    clock = Clock(180)
    r = compensation_identity(Mechanism(0.0, 1.0, pi), 1.0, lo, hi, 10_000, 1e-3, 0.01, seed=4, workers=W)
    ok = r["overlap"] and clock.ok
    assert verdict(f"C4 compensation identity {label}", ok,
                   f"clamps {r['lhs']['mean']:.4f}+-{r['lhs']['stderr']:.4f} vs integral "
                   f"{r['rhs']['mean']:.4f}+-{r['rhs']['stderr']:.4f}, {clock}")


@pytest.mark.parametrize("label,pi", [("pi=0", None), ("atom", ATOM), ("stable", STABLE)])
def test_c05_bounds(verdict, label, pi):
    clock = Clock(180)
    mech = Mechanism(0.0, 1.0, pi) if pi is not None else Mechanism(0.0, 1.0)
    grid = (0.1, 0.25, 0.5, 1.0)
    checks = bound_suite(mech, (0.25, 0.5, 1.0, 2.0), grid, grid, 5000, seed=5, workers=W)
    bad = [c for c in checks if not c.passed]
    slack = min((c.bound + 3 * c.stderr - c.empirical) for c in checks)
    ok = not bad and clock.ok
    assert verdict(f"C5 bounds {label}", ok, f"{len(checks) - len(bad)}/{len(checks)} one-sided checks hold, "
                   f"min slack {slack:.4f}, {clock}")


def test_c06_first_passage_laplace(verdict):
    clock = Clock(180)
    rows = []
    for name, mech in (("pi=0", Mechanism(0.0, 1.0)), ("atom", Mechanism(0.0, 1.0, ATOM))):
        for r in passage_laplace(mech, [0.5, 1.0], 5000, 1e-4, 0.01, seed=6, cap=20.0, workers=W):
            rows.append((name, r))
    ok = all(abs(r["empirical"] - r["target"]) <= 3 * r["stderr"] + 0.02 for _, r in rows) and clock.ok
    detail = "; ".join(f"{n} x={r['x']:g}: {r['empirical']:.4f} vs {r['target']:.4f}" for n, r in rows)
    assert verdict("C6 first-passage Laplace", ok, f"{detail}; {clock}")


@pytest.mark.parametrize("alpha", [0.0, 0.5])
def test_c07_linear_ray_knight(verdict, alpha):
    clock = Clock(300)
    rep = ray_knight_linear(Mechanism(alpha, 1.0), 1.0, [0.25, 0.5, 1.0], 5000, 1e-4, 0.01, 0.02, seed=11,
                            cap=1e3, allowance=0.05, ks_tol=0.05, workers=W)
    ks = max(c.ks for c in rep.coordinates if not math.isnan(c.ks))
    ok = rep.passed and clock.ok
    assert verdict(f"C7 linear Ray-Knight alpha={alpha:g}", ok,
                   f"max KS {ks:.4f}, max z {max(c.z for c in rep.coordinates):.2f}, "
                   f"reached {rep.provenance['reached_fraction']:.3f}, {clock}")


@pytest.mark.parametrize("label,pi", [("atom", ATOM), ("stable", STABLE)])
def test_c08_linear_ray_knight_jumps(verdict, label, pi):
    clock = Clock(600)
    rep = ray_knight_linear(Mechanism(0.2, 1.0, pi), 1.0, [0.25, 0.5], 5000, 1e-4, 0.01, 0.02, seed=12,
                            dt_pop=2e-4, cap=1e3, allowance=0.07, ks_tol=0.05, workers=W)
    ks = max(c.ks for c in rep.coordinates if not math.isnan(c.ks))
    ok = rep.passed and clock.ok
    assert verdict(f"C8 linear Ray-Knight {label}", ok,
                   f"max KS {ks:.4f}, max z {max(c.z for c in rep.coordinates):.2f}, "
                   f"reached {rep.provenance['reached_fraction']:.3f}, {clock}")


def test_c09_injection(verdict):
    clock = Clock(300)
    rep = injection_check(Mechanism(0.2, 1.0, ATOM), 1.0, 2000, 1e-3, seed=9, ks_tol=0.07, workers=W)
    ok = rep.passed and clock.ok
    assert verdict("C9 injection construction", ok,
                   ", ".join(f"{c.name} KS {c.ks:.4f}" for c in rep.coordinates) + f", {clock}")


def test_c10_girsanov(verdict):
    clock = Clock(600)
    cfg = InteractConfig(f=InteractionFn.logistic(1.0, 2.0, 10.0), a=1.0, beta=1.0, x_target=0.5, dt=1e-3,
                         cap=200.0)
    rep = girsanov_check(cfg, 10_000, seed=10, workers=W)
    ok = rep.passed and len(rep.coordinates) >= 3 and clock.ok
    assert verdict("C10 Girsanov", ok, ", ".join(f"{c.name} z={c.z:.2f}" for c in rep.coordinates) + f", {clock}")


def test_c11_interacting_ray_knight(verdict):
    clock = Clock(900)
    cfg = InteractConfig(f=InteractionFn.logistic(1.0, 2.0, 10.0), a=1.0, beta=1.0, pi=FiniteAtoms([(1.0, 0.3)]),
                         x_target=1.0, dt=1e-4, cap=200.0)
    rep = ray_knight_interacting(cfg, [0.5, 1.0], [0.25, 0.5], 5000, seed=11, dt_pop=1e-3, allowance=0.07,
                                 ks_tol=0.07, workers=W)
    ks = max(c.ks for c in rep.coordinates)
    ok = rep.passed and clock.ok
    assert verdict("C11 interacting Ray-Knight", ok,
                   f"{len(rep.coordinates)} coordinates, max KS {ks:.4f}, "
                   f"max z {max(c.z for c in rep.coordinates):.2f}, {clock}")


def test_c12_extinction(verdict):
    clock = Clock(1)
    got = [extinction_criterion(InteractionFn.polynomial([0.0, -1.0]), 1.0),
           extinction_criterion(InteractionFn.linear(-1.0), 1.0),
           extinction_criterion(InteractionFn.linear(0.0), 1.0)]
    want = [Extinction.EXTINCT, Extinction.NOT_EXTINCT, Extinction.EXTINCT]
    ok = got == want and clock.ok
    assert verdict("C12 extinction criterion", ok, f"{[str(g) for g in got]}, {clock}")


def test_c13_truncation(verdict):
    clock = Clock(300)
    r = truncation_convergence(Mechanism(0.0, 1.0, STABLE), (0.5, 0.25, 0.1), 1.0, 5000, seed=13, workers=W)
    z = truncation_convergence(Mechanism(0.0, 1.0), (0.5, 0.25, 0.1), 1.0, 200, seed=13)
    ok = r["passed"] and z["mean_sup"] == [0.0, 0.0, 0.0] and clock.ok
    detail = ", ".join(f"eps={e:g}: {m:.3f} <= {v:.3f}" for e, m, v in zip(r["eps"], r["mean_sup"], r["envelope"]))
    assert verdict("C13 truncation convergence", ok, f"{detail}, decreasing={r['decreasing']}, {clock}")


def test_c14_reproducibility(verdict, tmp_path):
    runs = [
        ["simulate-height", "--set", "run.N=4", "--set", "simulation.horizon=0.5", "--set",
         "mechanism.pi.kind=atoms", "--set", "mechanism.pi.atoms=1:0.5"],
        ["simulate-csbp", "--set", "run.N=50", "--set", "simulation.horizon=0.5"],
        ["simulate-interacting", "--set", "run.N=4", "--set", "simulation.dt=1e-3", "--set",
         "simulation.x_target=0.25"],
        ["verify-bounds", "--set", "run.N=300", "--set", "simulation.s_list=0.5", "--set",
         "simulation.x_grid=0.5", "--set", "simulation.z_grid=0.5", "--workers", "2"],
    ]
    results = []
    for i, argv in enumerate(runs):
        first = tmp_path / f"run{i}"
        main([*argv, "--output", str(first)])
        results.append(replay_matches(first / "manifest.json", tmp_path / f"replay{i}"))
        n_files = len(json.loads((first / "manifest.json").read_text())["digests"])
        assert n_files >= 1
    ok = all(results)
    assert verdict("C14 reproducibility", ok, f"{sum(results)}/{len(results)} manifests replayed bit-exactly")
