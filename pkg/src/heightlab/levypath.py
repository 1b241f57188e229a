"""Grid simulation of the spectrally positive Lévy process ``X``.

``X_s = -alpha s + sqrt(2 beta) B_s + (compensated jumps)``. Jumps above
``eps_sim`` are kept exactly (binned to grid steps); smaller ones are replaced
by a Gaussian of matched variance.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .engine import chunk_size, run_engine
from .mechanism import Mechanism, psi
from .seeding import make_rng


class NotReached(RuntimeError):
    """The passage level was not reached within the budget."""


class InjectionDepthError(RuntimeError):
    pass


@dataclass(frozen=True)
class PathBudget:
    """Either a fixed horizon or a first-passage target with a hard time cap."""

    horizon: float | None = None
    x_target: float | None = None
    cap: float = 1e4

    def __post_init__(self):
        if (self.horizon is None) == (self.x_target is None):
            raise ValueError("set exactly one of horizon or x_target")
        if self.horizon is not None and self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.x_target is not None and self.x_target <= 0:
            raise ValueError("x_target must be positive")
        if not self.cap > 0:
            raise ValueError("cap must be positive")

    def steps(self, dt: float) -> int:
        span = self.horizon if self.horizon is not None else self.cap
        return int(round(span / dt))


@dataclass
class LevyPath:
    """Grid trajectory with its raw random inputs.

    ``values[i]`` is ``X`` at time ``i*dt`` and includes the jumps of step
    ``i`` (``jump_index == i``). ``drift`` is the constant per-unit-time drift
    (``-alpha`` minus the compensator); ``step_drift`` holds an extra
    state-dependent drift per step when the path was driven by feedback.
    """

    dt: float
    values: np.ndarray
    jump_index: np.ndarray
    jump_size: np.ndarray
    eps_sim: float
    brownian_increments: np.ndarray
    small_jump_increments: np.ndarray
    drift: float
    beta: float
    alpha: float
    small_jump_sd: float = 0.0
    step_drift: np.ndarray = field(default_factory=lambda: np.empty(0))
    passage: tuple | None = None  # (x, grid index, time) when stopped at a passage
    seed: object = None

    @property
    def n_steps(self) -> int:
        return self.values.size - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.values.size) * self.dt

    def jump_ptr(self) -> np.ndarray:
        """CSR offsets by grid point: jumps at point ``i`` are ``ptr[i]:ptr[i+1]``."""
        return np.searchsorted(self.jump_index, np.arange(self.values.size + 1), side="left").astype(np.int64)

    def jump_totals(self) -> np.ndarray:
        tot = np.zeros(self.values.size)
        np.add.at(tot, self.jump_index, self.jump_size)
        return tot

    def pre_values(self) -> np.ndarray:
        """Left limits at grid points (value before that step's jumps)."""
        ptr = self.jump_ptr()
        out = self.values.copy()
        for i in np.flatnonzero(np.diff(ptr)):
            s = 0.0
            for q in range(ptr[i], ptr[i + 1]):
                s += self.jump_size[q]
            out[i] = self.values[i] - s
        return out

    def rebuild(self) -> np.ndarray:
        """Recompute ``values`` from the stored components."""
        out = np.empty_like(self.values)
        ptr = self.jump_ptr()
        K.rebuild_values(float(self.values[0]), self.drift, self.dt, self.beta, self.brownian_increments,
                         self.small_jump_sd, self.small_jump_increments, self.step_drift, ptr[1:],
                         self.jump_size, out)
        return out

    def running_inf(self) -> np.ndarray:
        return np.minimum.accumulate(self.pre_values())


def _from_record(rec: dict, mech: Mechanism, dt: float, eps_sim: float, seed, passage=None) -> LevyPath:
    return LevyPath(dt=dt, values=rec["values"], jump_index=rec["jump_index"], jump_size=rec["jump_size"],
                    eps_sim=eps_sim, brownian_increments=rec["xi"], small_jump_increments=rec["eta"],
                    drift=rec["drift"], beta=mech.beta, alpha=mech.alpha, small_jump_sd=rec["small_jump_sd"],
                    passage=passage, seed=seed)


def simulate_levy(mech: Mechanism, budget: PathBudget, dt: float, eps_sim: float, seed,
                  small_jump_gauss: bool = True) -> LevyPath:
    """Simulate one path on the grid ``0, dt, 2dt, ...``.

    In first-passage mode the path stops at the step during which ``X`` first
    falls to ``-x``; jumps falling in that last step are discarded.
    """
    rng = make_rng(seed)
    steps = budget.steps(dt)
    if budget.horizon is not None:
        res = run_engine(mech, rng, dt=dt, eps_sim=eps_sim, horizon_steps=steps, record=True,
                         small_jump_gauss=small_jump_gauss)
        passage = None
    else:
        res = run_engine(mech, rng, dt=dt, eps_sim=eps_sim, cap_steps=steps, targets=[budget.x_target],
                         record=True, small_jump_gauss=small_jump_gauss)
        passage = (budget.x_target, int(res.pass_index[0]), float(res.pass_time[0])) if res.stopped else None
    return _from_record(res.rec, mech, dt, eps_sim, seed, passage)


def passage_index_time(path: LevyPath, x: float):
    """``(grid index, interpolated time)`` of the first fall to ``-x``, or ``None``."""
    if x <= 0:
        raise ValueError("x must be positive")
    pre = path.pre_values()
    hits = np.flatnonzero(pre[1:] <= -x)
    if not hits.size:
        return None
    k = int(hits[0]) + 1
    prev, p = path.values[k - 1], pre[k]
    gap = prev - p
    frac = (prev + x) / gap if gap > 0.0 else 1.0
    return k, (k - 1 + frac) * path.dt


def first_passage_time(path: LevyPath, x: float) -> float:
    """Time at which ``X`` first reaches ``-x``, linearly interpolated in the crossing step.

    Only the continuous part of a step can cross downwards, so the pre-jump
    value is tested. Raises :class:`NotReached` if the path never gets there.
    """
    hit = passage_index_time(path, x)
    if hit is None:
        raise NotReached(f"X never fell to -{x} within {path.n_steps} steps")
    return hit[1]


def laplace_check(mech: Mechanism, s: float, lam: float, n_paths: int, dt: float, eps_sim: float, seed,
                  small_jump_gauss: bool = True):
    """Empirical ``E exp(-lam X_s)`` against ``exp(s psi(lam))``.

    Returns ``(empirical mean, target, standard error)``.
    """
    from .seeding import seed_split

    target = math.exp(s * psi(mech, lam))
    if lam == 0:
        return 1.0, 1.0, 0.0
    steps = int(round(s / dt))
    vals = np.empty(n_paths)
    for r in range(n_paths):
        res = run_engine(mech, make_rng(seed_split(seed, 0, r)), dt=dt, eps_sim=eps_sim, horizon_steps=steps,
                         small_jump_gauss=small_jump_gauss)
        vals[r] = math.exp(-lam * res.x_end)
    return float(vals.mean()), target, float(vals.std(ddof=1) / math.sqrt(n_paths))


# ---------------------------------------------------------------- injection


def _drifted_piece(rng, start, level, drift, sq, dt, max_steps):
    """Gaussian increments of a drifted BM from ``start`` until it is ``<= level``."""
    xi_parts, lev_parts = [], []
    pos = start
    used = 0
    i = 0
    while True:
        n = chunk_size(i) >> 4
        i += 1
        xi = rng.standard_normal(n)
        path = pos + np.cumsum(drift * dt + sq * xi)
        hit = np.flatnonzero(path <= level)
        if hit.size:
            xi_parts.append(xi[: hit[0] + 1])
            lev_parts.append(path[: hit[0] + 1])
            return np.concatenate(xi_parts), np.concatenate(lev_parts)
        xi_parts.append(xi)
        lev_parts.append(path)
        pos = path[-1]
        used += n
        if used > max_steps:
            raise InjectionDepthError(f"piece exceeded {max_steps} steps without returning")


@dataclass
class _Piece:
    xi: np.ndarray
    levels: np.ndarray  # own levels after each step (relative to the piece origin)
    children: list = field(default_factory=list)  # (step, z, child id)
    height0: float = 0.0


def inject_construct(mech: Mechanism, x: float, dt: float, seed, max_pieces: int = 200_000,
                     max_steps: int = 50_000_000, history: bool = False):
    """Build ``X`` up to its first fall to ``-x`` by recursive excursion injection.

    A root drifted Brownian piece runs from 0 until it is at or below ``-x``.
    Each piece carries Poisson atoms ``(s, z)`` at rate ``pi`` per unit of its
    own time. Atoms are processed lowest height first: an atom at step ``j``
    of a piece splices in a fresh drifted Brownian piece started at ``+z``
    that runs until it returns to its starting level. The pieces are then
    concatenated depth first.

    The drift of every piece is ``-alpha - int z pi(dz)``, so the uncompensated
    jumps give back ``E X_s = -alpha s``. The measure must be finite.
    """
    pi = mech.pi
    mass = 0.0 if pi.is_zero else pi.total_mass()
    if not np.isfinite(mass):
        raise ValueError("inject_construct needs a finite Lévy measure")
    rng = make_rng(seed)
    mean = 0.0 if pi.is_zero else pi.moment(1)
    drift = -mech.alpha - mean
    sq = math.sqrt(2.0 * mech.beta * dt)
    beta = mech.beta

    pieces: list[_Piece] = []
    heap: list = []
    stages = []

    def spawn(start, level, h0):
        xi, lev = _drifted_piece(rng, start, level, drift, sq, dt, max_steps)
        pid = len(pieces)
        if pid >= max_pieces:
            raise InjectionDepthError(f"more than {max_pieces} injected pieces")
        pc = _Piece(xi, lev, height0=h0)
        pieces.append(pc)
        n = xi.size
        cnt = rng.poisson(mass * n * dt) if mass > 0 else 0
        if cnt:
            steps = np.sort(rng.integers(0, n, cnt))
            sizes = pi.sample(rng, cnt, getattr(pi, "eps", 0.0))
            ref = np.minimum.accumulate(np.concatenate([[start], lev]))[1:]
            loc_h = (lev - ref) / beta
            for j, z in zip(steps, sizes):
                heapq.heappush(heap, (h0 + loc_h[j], pid, int(j), float(z)))
        return pid

    spawn(0.0, -x, 0.0)
    while heap:
        h, pid, j, z = heapq.heappop(heap)
        cid = spawn(z, 0.0, h)
        pieces[pid].children.append((j, z, cid))
        if history:
            stages.append(_assemble(pieces, mech, dt, drift, x))

    path = _assemble(pieces, mech, dt, drift, x)
    return (path, stages) if history else path


def _assemble(pieces, mech, dt, drift, x) -> LevyPath:
    xi_out, jidx, jz = [], [], []
    count = 0

    # iterative depth-first walk: (piece id, next step)
    stack = [(0, 0)]
    ordered = {pid: sorted(pc.children) for pid, pc in enumerate(pieces)}
    cursor = {pid: 0 for pid in ordered}
    while stack:
        pid, s0 = stack.pop()
        pc = pieces[pid]
        kids = ordered[pid]
        c = cursor[pid]
        if c < len(kids):
            j, z, cid = kids[c]
            cursor[pid] = c + 1
            xi_out.append(pc.xi[s0: j + 1])
            count += j + 1 - s0
            jidx.append(count)
            jz.append(z)
            stack.append((pid, j + 1))
            stack.append((cid, 0))
        else:
            xi_out.append(pc.xi[s0:])
            count += pc.xi.size - s0
    xi = np.concatenate(xi_out) if xi_out else np.empty(0)
    jump_index = np.asarray(jidx, dtype=np.int64)
    jump_size = np.asarray(jz, dtype=float)
    # stable order of jumps sharing one grid point is the splice order
    order = np.argsort(jump_index, kind="stable")
    jump_index, jump_size = jump_index[order], jump_size[order]
    path = LevyPath(dt=dt, values=np.zeros(xi.size + 1), jump_index=jump_index, jump_size=jump_size,
                    eps_sim=0.0, brownian_increments=xi, small_jump_increments=np.zeros(xi.size), drift=drift,
                    beta=mech.beta, alpha=mech.alpha)
    path.values = path.rebuild()
    hit = passage_index_time(path, x)
    if hit is None:
        return path
    k, t = hit
    keep = path.jump_index < k
    cut = LevyPath(dt=dt, values=None, jump_index=path.jump_index[keep], jump_size=path.jump_size[keep],
                   eps_sim=0.0, brownian_increments=xi[:k], small_jump_increments=np.zeros(k), drift=drift,
                   beta=mech.beta, alpha=mech.alpha, passage=(x, k, t))
    cut.values = np.empty(k + 1)
    cut.values = cut.rebuild()
    return cut
