"""Local time of the height process and the passage times ``S_x``.

Two estimators are provided. The occupation estimator bins grid points by
level; the Tanaka estimator uses the semimartingale decomposition

    L^t(s) = beta (H_s - t)^+ - int 1{H_r >= t} dX_r
             + sum_{jumps r <= s, H_r >= t} (z + inf_[r,s] X - X_r)^+.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .height import HeightPath, jump_clamps
from .levypath import LevyPath, NotReached, passage_index_time


@dataclass
class LocalTimeField:
    """Cumulative bin occupation of ``H``.

    ``counts[c, j]`` is the number of grid points ``0 .. checkpoints[c]-1``
    whose height lies in ``[j delta, (j+1) delta)``; the estimate of ``L`` at
    that level is ``counts * dt / delta``. Points above the top bin are
    tallied in ``overflow``. Points with ``H == 0`` exactly are ladder points
    of the grid walk; they go to ``boundary`` (the continuous height spends
    no time at 0, and counting them inflates the lowest bin by ``O(sqrt(dt)/delta)``).
    """

    dt: float
    delta: float
    checkpoints: np.ndarray
    counts: np.ndarray
    overflow: np.ndarray
    boundary: np.ndarray

    @property
    def n_bins(self) -> int:
        return self.counts.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.checkpoints * self.dt

    @property
    def lower_edges(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.delta

    @property
    def estimate(self) -> np.ndarray:
        return self.counts * (self.dt / self.delta)

    def elapsed(self) -> np.ndarray:
        """Occupation time per checkpoint: binned, overflow and boundary points."""
        return (self.counts.sum(axis=1) + self.overflow + self.boundary) * self.dt

    def at_level(self, t: float, c: int = -1) -> float:
        """Estimate at level ``t`` by linear interpolation between bin centres."""
        return level_value(self.estimate[c], self.delta, t)


def level_value(est: np.ndarray, delta: float, t) -> np.ndarray:
    centres = (np.arange(est.size) + 0.5) * delta
    return np.interp(t, centres, est, left=est[0] if est.size else 0.0, right=0.0)


def local_time_occupation(h: HeightPath, delta_t: float, checkpoints) -> LocalTimeField:
    """Occupation-density estimate at the given checkpoint times."""
    if delta_t <= 0:
        raise ValueError("delta_t must be positive")
    cps = np.rint(np.asarray(checkpoints, dtype=float) / h.dt).astype(np.int64)
    if np.any(np.diff(cps) < 0):
        raise ValueError("checkpoints must be sorted")
    if np.any(cps < 0) or np.any(cps > h.values.size):
        raise ValueError("checkpoints outside the path")
    nbins = int(math.floor(float(h.values.max()) / delta_t)) + 1 if h.values.size else 1
    out = np.zeros((cps.size, nbins), dtype=np.int64)
    over = np.zeros(cps.size, dtype=np.int64)
    zero = np.zeros(cps.size, dtype=np.int64)
    K.occupation_counts(h.values, float(delta_t), nbins, cps, out, over, zero)
    return LocalTimeField(h.dt, float(delta_t), cps, out, over, zero)


def local_time_tanaka(path: LevyPath, h: HeightPath, t: float, s: float) -> float:
    """Tanaka-formula local time of ``H`` at level ``t`` up to grid time ``s``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    k = int(round(s / path.dt))
    if not 0 <= k <= path.n_steps:
        raise ValueError("s outside the path")
    beta = path.beta
    hv = h.values
    first = beta * max(hv[k] - t, 0.0)
    integral = K.tanaka_sum(path.values, hv, path.jump_ptr(), path.jump_size, float(t), k)
    clamps = 0.0
    if path.jump_size.size:
        cl = jump_clamps(path, k)
        sel = (path.jump_index <= k) & (hv[path.jump_index] >= t)
        clamps = float(cl[sel].sum())
    return first + integral + clamps


@dataclass(frozen=True)
class FirstPassageRecord:
    x: float
    index: int
    time: float
    reached: bool

    def require(self) -> "FirstPassageRecord":
        if not self.reached:
            raise NotReached(f"S_x not reached for x={self.x}")
        return self


def first_passage_Sx(path: LevyPath, x: float) -> FirstPassageRecord:
    """``S_x`` as the first fall of ``X`` to ``-x`` (``L^0 = -inf X``)."""
    hit = passage_index_time(path, x)
    if hit is None:
        return FirstPassageRecord(float(x), -1, math.nan, False)
    return FirstPassageRecord(float(x), int(hit[0]), float(hit[1]), True)


def ltfield_at_Sx(path: LevyPath, h: HeightPath, x: float, delta_t: float) -> np.ndarray:
    """Occupation estimate of ``t -> L^t(S_x)`` over level bins of width ``delta_t``."""
    rec = first_passage_Sx(path, x).require()
    field = local_time_occupation(h, delta_t, [rec.index * path.dt])
    return field.estimate[0]

