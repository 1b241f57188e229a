"""Height process driven by its own local time, and Girsanov reweighting.

The driving path has drift ``c_r = f_b'(L^{H_r}(r)) + g_a(H_r)`` with
``g_a(h) = -(h - a)^+``. The local time is read from the same level bins that
the occupation estimator uses, at the left limit of each step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .engine import Feedback, run_engine
from .height import HeightPath
from .levypath import LevyPath, NotReached, PathBudget
from .loctime import FirstPassageRecord, LocalTimeField, local_time_occupation
from .measures import LevyMeasure, ZeroMeasure
from .mechanism import InteractionFn, Mechanism
from .seeding import make_rng


@dataclass(frozen=True)
class InteractConfig:
    """Parameters of one interacting-height experiment.

    ``f`` should already be localised (``f.b`` finite) unless its derivative
    is bounded. ``a`` is the level above which ``g_a`` pushes the height down.
    ``cap`` is the time budget before a run is declared not reached.
    """

    f: InteractionFn
    a: float
    beta: float
    pi: LevyMeasure = ZeroMeasure()
    x_target: float = 1.0
    dt: float = 1e-3
    eps_sim: float = 0.01
    delta_t: float = 0.02
    cap: float = 200.0
    small_jump_gauss: bool = True

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("reflection level a must be positive")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        for name in ("x_target", "dt", "eps_sim", "delta_t", "cap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def mechanism(self) -> Mechanism:
        # the linear part of the drift lives in f
        return Mechanism(0.0, self.beta, self.pi)

    def feedback(self) -> Feedback:
        return Feedback.from_interaction(self.f, self.a)

    def g_a(self, h):
        return -np.maximum(np.asarray(h, dtype=float) - self.a, 0.0)


@dataclass
class GirsanovWeight:
    """``log Y = dB_term - dt_term`` accumulated up to the stopping step."""

    db_term: float
    dt_term: float
    stopped: bool
    stop_index: int

    @property
    def log_weight(self) -> float:
        return self.db_term - self.dt_term

    @property
    def weight(self) -> float:
        return math.exp(self.log_weight)


@dataclass
class Bundle:
    """A recorded run: driving path, height, local-time field and passage."""

    path: LevyPath
    height: HeightPath
    field: LocalTimeField
    passage: FirstPassageRecord
    c_high: float = -math.inf
    engine_log_weight: float = math.nan


def _bundle(cfg: InteractConfig, res, seed, drifted: bool) -> Bundle:
    rec = res.rec
    steps = res.steps
    path = LevyPath(dt=cfg.dt, values=rec["values"], jump_index=rec["jump_index"], jump_size=rec["jump_size"],
                    eps_sim=cfg.eps_sim, brownian_increments=rec["xi"], small_jump_increments=rec["eta"],
                    drift=rec["drift"], beta=cfg.beta, alpha=0.0, small_jump_sd=rec["small_jump_sd"],
                    step_drift=rec["drift_feedback"] if drifted else np.empty(0), seed=seed)
    if res.stopped:
        path.passage = (cfg.x_target, int(res.pass_index[0]), float(res.pass_time[0]))
        rec_fp = FirstPassageRecord(cfg.x_target, int(res.pass_index[0]), float(res.pass_time[0]), True)
    else:
        rec_fp = FirstPassageRecord(cfg.x_target, -1, math.nan, False)
    h = HeightPath(cfg.dt, rec["heights"], path)
    end = rec_fp.index if rec_fp.reached else steps
    field = local_time_occupation(h, cfg.delta_t, [end * cfg.dt])
    return Bundle(path, h, field, rec_fp, res.c_high, res.log_weight(cfg.beta))


def simulate_interacting_height(cfg: InteractConfig, seed):
    """Euler run of the interacting height up to ``S_x`` (or the cap).

    Returns ``(path, height, field, passage)``; ``path.step_drift`` holds the
    feedback drift used at every step.
    """
    b = run_interacting(cfg, seed, record=True)
    return b.path, b.height, b.field, b.passage


def run_interacting(cfg: InteractConfig, seed, record: bool = True, targets=None, mode: int = K.MODE_DRIFT,
                    sn_level: float = math.inf):
    """Low-level entry returning a :class:`Bundle` (record) or the raw engine result."""
    tg = [cfg.x_target] if targets is None else list(targets)
    res = run_engine(cfg.mechanism, make_rng(seed), dt=cfg.dt, eps_sim=cfg.eps_sim,
                     cap_steps=PathBudget(x_target=max(tg), cap=cfg.cap).steps(cfg.dt), targets=tg,
                     record=record, mode=mode, feedback=cfg.feedback(), include_alpha=False,
                     delta=cfg.delta_t, sn_level=sn_level, freeze_at_sn=math.isfinite(sn_level),
                     small_jump_gauss=cfg.small_jump_gauss)
    if not record:
        return res
    return _bundle(cfg, res, seed, drifted=mode == K.MODE_DRIFT)


def simulate_reference(cfg: InteractConfig, seed, sn_level: float = math.inf) -> Bundle:
    """Driftless reference run (same noise law, feedback only tallied for the weight)."""
    return run_interacting(cfg, seed, record=True, mode=K.MODE_WEIGHT, sn_level=sn_level)


def girsanov_weight(bundle: Bundle, f: InteractionFn, a: float, beta: float, x: float | None = None,
                    delta_t: float | None = None, sn_level: float = math.inf) -> GirsanovWeight:
    """Radon-Nikodym weight of the interacting law against the driftless reference.

    ``log Y = (2 beta)^{-1/2} sum c_r sqrt(dt) xi_r - (4 beta)^{-1} sum c_r^2 dt``
    over the steps up to ``S_x`` of the reference path, with ``c_r`` read from
    the bundle's own height and local time. With a finite ``sn_level`` the
    sums stop at the first step where the local time at the current height
    reaches it.
    """
    path = bundle.path
    if path.brownian_increments is None or path.brownian_increments.size != path.n_steps:
        raise ValueError("the reference bundle must keep its Brownian increments")
    delta = bundle.field.delta if delta_t is None else delta_t
    if x is None:
        stop = bundle.passage.index if bundle.passage.reached else path.n_steps
        stopped = bundle.passage.reached
    else:
        from .levypath import passage_index_time

        hit = passage_index_time(path, x)
        stop = hit[0] if hit else path.n_steps
        stopped = hit is not None
    fb = Feedback.from_interaction(f, a)
    pre = path.pre_values()
    gmin_prev = np.minimum.accumulate(np.concatenate([[0.0], np.minimum(pre[:-1], 0.0)]))
    cs = np.empty(max(stop, 0))
    db, dd, sn = K.replay_feedback(bundle.height.values, gmin_prev, path.brownian_increments, path.dt, delta,
                                   fb.table_step, fb.table, fb.a_level, sn_level, math.isfinite(sn_level),
                                   stop, cs)
    return GirsanovWeight(db / math.sqrt(2.0 * beta), dd / (4.0 * beta), stopped, int(stop))


def sn_guard(bundle: Bundle, n: float) -> float:
    """First grid time at which the local time at the current height reaches ``n``.

    Returns the end of the recorded run when that never happens.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    path = bundle.path
    end = path.n_steps
    if math.isinf(n):
        return end * path.dt
    pre = path.pre_values()
    gmin_prev = np.minimum.accumulate(np.concatenate([[0.0], np.minimum(pre[:-1], 0.0)]))
    tab = np.zeros(2)
    cs = np.empty(end)
    _, _, sn = K.replay_feedback(bundle.height.values, gmin_prev, np.zeros(end), path.dt, bundle.field.delta,
                                 1.0, tab, math.inf, float(n), False, end, cs)
    return (sn if sn >= 0 else end) * path.dt


def require_reached(bundle: Bundle) -> Bundle:
    if not bundle.passage.reached:
        raise NotReached(f"S_x not reached within cap {bundle.path.n_steps * bundle.path.dt}")
    return bundle
