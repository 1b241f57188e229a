"""Chunked driver around the compiled step kernel.

Random inputs are drawn with numpy in chunks of deterministic, geometrically
growing size, so the same seed always yields the same path whatever the
consumer (single recorded path or ensemble summary).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .mechanism import Mechanism

MAX_JUMP_RATE = 10.0
_CHUNK_MIN, _CHUNK_MAX = 1 << 12, 1 << 16


def chunk_size(i: int) -> int:
    return min(_CHUNK_MIN << i, _CHUNK_MAX)


@dataclass
class Feedback:
    """Local-time feedback drift ``f_b'(L) + g_a(H)`` in tabulated form."""

    table_step: float
    table: np.ndarray
    a_level: float = math.inf
    high_level: float = math.inf

    @classmethod
    def from_interaction(cls, fn, a_level=math.inf, n=4097, upper=None):
        if upper is None:
            upper = fn.b + 1.0 if np.isfinite(fn.b) else 100.0
        grid, tab = fn.fprime_table(upper, n)
        high = fn.theta + a_level + 1.0
        return cls(float(grid[1] - grid[0]), np.ascontiguousarray(tab), float(a_level), float(high))

    @classmethod
    def none(cls):
        return cls(1.0, np.zeros(2))


@dataclass
class EngineResult:
    steps: int
    stopped: bool
    x_end: float
    h_end: float
    hmax: float
    counts: np.ndarray
    overflow: int
    boundary: int
    pass_index: np.ndarray
    pass_time: np.ndarray
    pass_hmax: np.ndarray
    snaps: np.ndarray
    logw_db: float
    logw_dt: float
    sn_index: int
    c_high: float
    rec: dict = field(default_factory=dict)

    def log_weight(self, beta: float) -> float:
        return self.logw_db / math.sqrt(2.0 * beta) - self.logw_dt / (4.0 * beta)


def step_inputs(mech: Mechanism, dt: float, eps_sim: float, small_jump_gauss: bool):
    """Per-step constants: (jump rate, compensator, small-jump sd)."""
    pi = mech.pi
    if pi.is_zero:
        return 0.0, 0.0, 0.0
    rate = pi.tail(eps_sim)
    if dt * rate > MAX_JUMP_RATE:
        raise ValueError(f"jump rate overflow: dt*pi(eps,inf) = {dt * rate:.3g} > {MAX_JUMP_RATE}; "
                         "use a smaller dt or a larger eps_sim")
    comp = pi.moment(1, eps_sim, math.inf)
    sds = math.sqrt(dt * pi.moment(2, 0.0, eps_sim)) if small_jump_gauss else 0.0
    return rate, comp, sds


def run_engine(mech: Mechanism, rng: np.random.Generator, *, dt: float, eps_sim: float,
               horizon_steps: int | None = None, cap_steps: int | None = None,
               targets=(), record: bool = False, mode: int = K.MODE_PLAIN,
               feedback: Feedback | None = None, include_alpha: bool = True,
               delta: float = 0.02, init_bins: int = 64, max_bins: int = 1 << 22,
               sn_level: float = math.inf, freeze_at_sn: bool = False,
               small_jump_gauss: bool = True) -> EngineResult:
    if dt <= 0 or eps_sim <= 0:
        raise ValueError("dt and eps_sim must be positive")
    if (horizon_steps is None) == (cap_steps is None):
        raise ValueError("give exactly one of horizon_steps or cap_steps")
    targets = np.ascontiguousarray(np.asarray(targets, dtype=float))
    if np.any(np.diff(targets) <= 0) or np.any(targets <= 0):
        raise ValueError("passage targets must be positive and strictly increasing")
    limit = horizon_steps if horizon_steps is not None else cap_steps
    rate, comp, sds = step_inputs(mech, dt, eps_sim, small_jump_gauss)
    drift0 = (-mech.alpha if include_alpha else 0.0) - comp
    fb = feedback or Feedback.none()

    fst, ist = K.new_state()
    bar = np.empty(64)
    gm = np.empty(64)
    gs = np.empty(64, dtype=np.int64)
    nb = int(min(init_bins, max_bins))
    counts = np.zeros(nb, dtype=np.int64)
    ntg = targets.size
    snaps = np.zeros((ntg, nb), dtype=np.int64)
    pass_idx = np.full(ntg, -1, dtype=np.int64)
    pass_time = np.full(ntg, np.nan)
    pass_hmax = np.full(ntg, np.nan)
    pieces = {"x": [], "h": [], "c": [], "xi": [], "eta": [], "jidx": [], "jz": []}
    empty = np.empty(0)

    ci = 0
    while ist[K.I_K] < limit and not ist[K.I_STOP]:
        start = int(ist[K.I_K])
        nc = min(chunk_size(ci), limit - start)
        ci += 1
        xi = rng.standard_normal(nc)
        eta = rng.standard_normal(nc) if sds > 0 else np.zeros(nc)
        if rate > 0:
            nj = rng.poisson(rate * dt, nc)
            jz = np.ascontiguousarray(mech.pi.sample(rng, int(nj.sum()), eps_sim), dtype=float)
        else:
            nj = np.zeros(nc, dtype=np.int64)
            jz = empty
        jptr = np.zeros(nc + 1, dtype=np.int64)
        np.cumsum(nj, out=jptr[1:])
        rx = np.empty(nc if record else 0)
        rh = np.empty(nc if record else 0)
        rc = np.empty(nc if record else 0)
        ist[K.I_J] = 0
        while True:
            status = K.run_chunk(xi, eta, jptr, jz, dt, mech.beta, drift0, sds,
                                 mode, fb.table_step, fb.table, fb.a_level, fb.high_level,
                                 delta, counts, max_bins,
                                 targets, snaps, pass_idx, pass_time, pass_hmax,
                                 sn_level, freeze_at_sn,
                                 fst, ist, bar, gm, gs,
                                 record, rx, rh, rc)
            if status == K.ST_GROW_STACK:
                need = int(ist[K.I_NE] + nj[ist[K.I_J]]) + 1
                size = max(2 * bar.size, need)
                bar = np.concatenate([bar, np.empty(size - bar.size)])
                gm = np.concatenate([gm, np.empty(size - gm.size)])
                gs = np.concatenate([gs, np.empty(size - gs.size, dtype=np.int64)])
            elif status == K.ST_GROW_LEVELS:
                need = int(fst[K.F_H] / delta) + 1
                size = int(min(max(2 * counts.size, need), max_bins))
                counts = np.concatenate([counts, np.zeros(size - counts.size, dtype=np.int64)])
                snaps = np.concatenate([snaps, np.zeros((ntg, size - snaps.shape[1]), dtype=np.int64)], axis=1)
            else:
                break
        if record:
            used = int(ist[K.I_J])
            pieces["x"].append(rx[:used])
            pieces["h"].append(rh[:used])
            pieces["c"].append(rc[:used])
            pieces["xi"].append(xi[:used])
            pieces["eta"].append(eta[:used])
            keep_steps = used - 1 if status == K.ST_STOPPED else used
            nkeep = int(jptr[keep_steps])
            pieces["jz"].append(jz[:nkeep])
            pieces["jidx"].append(start + 1 + np.repeat(np.arange(keep_steps), nj[:keep_steps]))

    res = EngineResult(
        steps=int(ist[K.I_K]), stopped=bool(ist[K.I_STOP]), x_end=float(fst[K.F_X]), h_end=float(fst[K.F_H]),
        hmax=float(max(fst[K.F_HMAX], fst[K.F_H])), counts=counts, overflow=int(ist[K.I_OVER]), boundary=int(ist[K.I_ZERO]),
        pass_index=pass_idx, pass_time=pass_time, pass_hmax=pass_hmax, snaps=snaps,
        logw_db=float(fst[K.F_LOGW_DB]), logw_dt=float(fst[K.F_LOGW_DT]), sn_index=int(ist[K.I_SN]),
        c_high=float(fst[K.F_CHIGH]))
    if record:
        cat = {k: (np.concatenate(v) if v else np.empty(0)) for k, v in pieces.items()}
        res.rec = {
            "values": np.concatenate([[0.0], cat["x"]]),
            "heights": np.concatenate([[0.0], cat["h"]]),
            "drift_feedback": cat["c"],
            "xi": cat["xi"],
            "eta": cat["eta"],
            "jump_index": cat["jidx"].astype(np.int64),
            "jump_size": cat["jz"],
            "drift": drift0,
            "small_jump_sd": sds,
            "jump_rate": rate,
            "compensator": comp,
        }
    return res
