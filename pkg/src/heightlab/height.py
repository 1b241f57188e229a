"""Height process from a Lévy path.

``beta H_s = X_s - inf_{r<=s} X_r - sum_{jumps r<=s} (z + inf_{[r,s]} X - X_r)^+``

Each jump opens a "horizontal stick": the clamp ``(z + inf X - X_r)^+`` starts
at ``z`` (so ``H`` does not jump) and is eaten away as ``X`` falls back to the
pre-jump level.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .levypath import LevyPath

BRUTE_FORCE_CAP = 100_000


class ExplorationStack:
    """Incremental clamp bookkeeping for a single forward pass.

    Entries are kept bottom to top in jump order. Each entry stores its barrier
    ``X_r - z``; consecutive entries that share a running minimum form a
    group, so a new low touches each group at most once.
    """

    def __init__(self, x0: float = 0.0, capacity: int = 64):
        self._fst, self._ist = K.new_state()
        self._fst[K.F_X] = x0
        self._fst[K.F_GMIN] = x0
        self._bar = np.empty(capacity)
        self._gm = np.empty(capacity)
        self._gs = np.empty(capacity, dtype=np.int64)

    def __len__(self):
        return int(self._ist[K.I_NE])

    @property
    def global_min(self) -> float:
        return float(self._fst[K.F_GMIN])

    @property
    def clamp_sum(self) -> float:
        return float(self._fst[K.F_CSUM])

    @property
    def x(self) -> float:
        return float(self._fst[K.F_X])

    def entries(self):
        """``[(barrier, running minimum)]`` bottom to top."""
        ne, ng = len(self), int(self._ist[K.I_NG])
        out = []
        for g in range(ng):
            hi = self._gs[g + 1] if g + 1 < ng else ne
            for e in range(self._gs[g], hi):
                out.append((float(self._bar[e]), float(self._gm[g])))
        return out

    def direct_clamp_sum(self) -> float:
        return sum(max(m - b, 0.0) for b, m in self.entries())

    def move(self, v: float):
        """Continuous move of ``X`` to ``v``."""
        K.stack_lower(v, self._fst, self._ist, self._bar, self._gm, self._gs)
        self._fst[K.F_X] = v

    def jump(self, z: float):
        if not z > 0:
            raise ValueError("jumps must be positive")
        if len(self) + 1 > self._bar.size:
            n = 2 * self._bar.size
            self._bar = np.resize(self._bar, n)
            self._gm = np.resize(self._gm, n)
            self._gs = np.resize(self._gs, n)
        K.stack_push(self.x, z, self._fst, self._ist, self._bar, self._gm, self._gs)
        self._fst[K.F_X] += z

    def height(self, beta: float) -> float:
        return float(K.height_value(self._fst, beta))


@dataclass
class HeightPath:
    dt: float
    values: np.ndarray
    source: LevyPath
    clamp: np.ndarray | None = None
    max_depth: int = 0

    @property
    def times(self):
        return np.arange(self.values.size) * self.dt


def height_from_path(path: LevyPath, beta: float) -> HeightPath:
    """One forward pass of the exploration stack over the grid."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    ptr = path.jump_ptr()
    cap = max(64, path.jump_size.size + 1)
    h = np.empty(path.values.size)
    cs = np.empty(path.values.size)
    bar, gm, gs = np.empty(cap), np.empty(cap), np.empty(cap, dtype=np.int64)
    depth = K.height_pass(path.values, ptr, path.jump_size, float(beta), bar, gm, gs, h, cs)
    return HeightPath(path.dt, h, path, cs, int(depth))


def _augmented(path: LevyPath):
    return K.augmented_points(path.values, path.jump_ptr(), path.jump_size)


def height_brute_force(path: LevyPath, beta: float) -> HeightPath:
    """Quadratic-cost evaluation of the defining formula (oracle)."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    if path.values.size > BRUTE_FORCE_CAP:
        raise ValueError(f"path has {path.values.size} points; brute force is capped at {BRUTE_FORCE_CAP}")
    aug, gpos, jpos, _ = _augmented(path)
    out = np.empty(path.values.size)
    K.brute_height(aug, gpos, jpos, np.empty(0), path.jump_size, float(beta), out)
    return HeightPath(path.dt, out, path)


def jump_clamps(path: LevyPath, s_index: int, z_low: float = 0.0, z_high: float = np.inf) -> np.ndarray:
    """Clamp of every stored jump at grid index ``s_index`` (0 for later jumps or sizes outside the range)."""
    aug, gpos, jpos, _ = _augmented(path)
    out = np.empty(path.jump_size.size)
    K.clamps_at(aug, gpos, jpos, path.jump_size, int(s_index), float(z_low), float(z_high), out)
    return out


def clamp_sum(path: LevyPath, s: float, z_low: float = 0.0, z_high: float = np.inf) -> float:
    """Sum over jumps at times ``r <= s`` with size in ``(z_low, z_high]`` of their clamp at ``s``."""
    if not 0 <= z_low < z_high:
        raise ValueError("need 0 <= z_low < z_high")
    k = int(round(s / path.dt))
    if not 0 <= k <= path.n_steps:
        raise ValueError(f"s={s} lies outside the path")
    return float(jump_clamps(path, k, z_low, z_high).sum())
