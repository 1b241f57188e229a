"""Compiled inner loops.

Grid convention: step ``k`` moves from grid point ``k-1`` to ``k``. The
continuous part (drift, Gaussian noise, compensator) produces the pre-jump
value ``pre``; jumps assigned to step ``k`` are then added one by one, so
``X[k]`` is the post-jump value.

Grid points where ``H`` is exactly 0 are ladder points of ``X`` (a new
running minimum). The continuous height spends zero time there, so the
occupation tallies keep them in a separate boundary counter instead of the
lowest level bin.

The exploration stack keeps one entry per live jump (its barrier ``X_r - z``)
and groups consecutive entries sharing a running minimum, so that lowering
the minimum of a whole suffix is amortised O(1).
"""
from __future__ import annotations

import numpy as np
from numba import njit

# float state slots
F_X, F_GMIN, F_CSUM, F_H, F_LOGW_DB, F_LOGW_DT, F_HMAX, F_CHIGH = range(8)
N_FSTATE = 8
# int state slots
I_K, I_J, I_NE, I_NG, I_TGT, I_OVER, I_STOP, I_SN, I_ZERO = range(9)
N_ISTATE = 9

ST_CHUNK_DONE, ST_STOPPED, ST_GROW_STACK, ST_GROW_LEVELS = 0, 1, 2, 3

MODE_PLAIN, MODE_DRIFT, MODE_WEIGHT = 0, 1, 2


def new_state():
    fst = np.zeros(N_FSTATE)
    fst[F_CHIGH] = -np.inf
    ist = np.zeros(N_ISTATE, dtype=np.int64)
    ist[I_SN] = -1
    return fst, ist


@njit(cache=True)
def stack_lower(v, fst, ist, bar, gm, gs):
    """Lower every running minimum above ``v`` to ``v``; pop exhausted entries."""
    if v < fst[F_GMIN]:
        fst[F_GMIN] = v
    ng = ist[I_NG]
    ne = ist[I_NE]
    if ng == 0 or gm[ng - 1] <= v:
        return
    csum = fst[F_CSUM]
    top = ne
    g = ng - 1
    while g >= 0 and gm[g] > v:
        csum -= (top - gs[g]) * (gm[g] - v)
        top = gs[g]
        g -= 1
    # merge groups g+1 .. ng-1 into one sitting at v
    ng = g + 2
    gm[ng - 1] = v
    while ne > 0:
        m = gm[ng - 1]
        b = bar[ne - 1]
        if b >= m:
            csum -= m - b
            ne -= 1
            if ne == gs[ng - 1]:
                ng -= 1
        else:
            break
    if ne == 0:
        csum = 0.0
    fst[F_CSUM] = csum
    ist[I_NE] = ne
    ist[I_NG] = ng


@njit(cache=True)
def stack_push(p, z, fst, ist, bar, gm, gs):
    ne = ist[I_NE]
    ng = ist[I_NG]
    bar[ne] = p
    gm[ng] = p + z
    gs[ng] = ne
    ist[I_NE] = ne + 1
    ist[I_NG] = ng + 1
    fst[F_CSUM] += z


@njit(cache=True)
def height_value(fst, beta):
    h = (fst[F_X] - fst[F_GMIN] - fst[F_CSUM]) / beta
    return h if h > 0.0 else 0.0


@njit(cache=True)
def continuous_step(x, drift, dt, sq, xi, sds, eta):
    return x + drift * dt + sq * xi + sds * eta


@njit(cache=True)
def table_interp(h, tab, u):
    if u <= 0.0:
        return tab[0]
    pos = u / h
    i = int(pos)
    if i >= tab.size - 1:
        return tab[tab.size - 1]
    w = pos - i
    return tab[i] + w * (tab[i + 1] - tab[i])


@njit(cache=True)
def run_chunk(xi, eta, jptr, jz,
              dt, beta, drift0, sds,
              mode, fp_h, fp_tab, a_level, high_level,
              delta, counts, max_bins,
              targets, snaps, pass_idx, pass_time, pass_hmax,
              sn_level, freeze_at_sn,
              fst, ist, bar, gm, gs,
              record, rec_x, rec_h, rec_c):
    n = xi.size
    sq = np.sqrt(2.0 * beta * dt)
    sqdt = np.sqrt(dt)
    ntg = targets.size
    nb = counts.size
    cap = bar.size
    # hot state lives in locals and is written back on every exit
    x = fst[F_X]
    gmin = fst[F_GMIN]
    csum = fst[F_CSUM]
    hprev = fst[F_H]
    logdb = fst[F_LOGW_DB]
    logdt = fst[F_LOGW_DT]
    hmax = fst[F_HMAX]
    chigh = fst[F_CHIGH]
    kk = ist[I_K]
    j = ist[I_J]
    ne = ist[I_NE]
    ng = ist[I_NG]
    tgt = ist[I_TGT]
    over = ist[I_OVER]
    zero = ist[I_ZERO]
    sn = ist[I_SN]
    status = ST_CHUNK_DONE
    while j < n:
        k = kk + 1
        b = int(hprev / delta)
        if b >= nb:
            if nb < max_bins:
                status = ST_GROW_LEVELS
                break
            b = -1
        elif hprev == 0.0:
            b = -2
        j0 = jptr[j]
        j1 = jptr[j + 1]
        if ne + (j1 - j0) > cap or ng + (j1 - j0) > cap:
            status = ST_GROW_STACK
            break
        if b >= 0:
            lhat = counts[b] * dt / delta
        elif b == -2:
            lhat = -gmin  # exact local time at level 0
        else:
            lhat = 0.0
        if sn < 0 and lhat >= sn_level:
            sn = k - 1
        c = 0.0
        if mode != MODE_PLAIN:
            c = table_interp(fp_h, fp_tab, lhat)
            if hprev > a_level:
                c -= hprev - a_level
            if hprev > high_level and c > chigh:
                chigh = c
            if mode == MODE_WEIGHT and not (freeze_at_sn and sn >= 0):
                logdb += c * sqdt * xi[j]
                logdt += c * c * dt
        drift = drift0 + c if mode == MODE_DRIFT else drift0
        pre = continuous_step(x, drift, dt, sq, xi[j], sds, eta[j])
        if b >= 0:
            counts[b] += 1
        elif b == -2:
            zero += 1
        else:
            over += 1
        if hprev > hmax:
            hmax = hprev
        while tgt < ntg and pre <= -targets[tgt]:
            pass_idx[tgt] = k
            gap = x - pre
            frac = (x + targets[tgt]) / gap if gap > 0.0 else 1.0
            pass_time[tgt] = (k - 1 + frac) * dt
            pass_hmax[tgt] = hmax
            for q in range(nb):
                snaps[tgt, q] = counts[q]
            tgt += 1
        final = ntg > 0 and tgt == ntg
        # lower running minima to pre
        if pre < gmin:
            gmin = pre
        if ng > 0 and gm[ng - 1] > pre:
            top = ne
            g = ng - 1
            while g >= 0 and gm[g] > pre:
                csum -= (top - gs[g]) * (gm[g] - pre)
                top = gs[g]
                g -= 1
            ng = g + 2
            gm[ng - 1] = pre
            while ne > 0:
                m = gm[ng - 1]
                bb = bar[ne - 1]
                if bb >= m:
                    csum -= m - bb
                    ne -= 1
                    if ne == gs[ng - 1]:
                        ng -= 1
                else:
                    break
            if ne == 0:
                csum = 0.0
        p = pre
        if not final:
            for q in range(j0, j1):
                z = jz[q]
                bar[ne] = p
                gm[ng] = p + z
                gs[ng] = ne
                ne += 1
                ng += 1
                csum += z
                p += z
        x = p
        h = (x - gmin - csum) / beta
        if h < 0.0:
            h = 0.0
        hprev = h
        if record:
            rec_x[j] = p
            rec_h[j] = h
            rec_c[j] = c
        kk = k
        j += 1
        if final:
            status = ST_STOPPED
            break
    fst[F_X] = x
    fst[F_GMIN] = gmin
    fst[F_CSUM] = csum
    fst[F_H] = hprev
    fst[F_LOGW_DB] = logdb
    fst[F_LOGW_DT] = logdt
    fst[F_HMAX] = hmax
    fst[F_CHIGH] = chigh
    ist[I_K] = kk
    ist[I_J] = j
    ist[I_NE] = ne
    ist[I_NG] = ng
    ist[I_TGT] = tgt
    ist[I_OVER] = over
    ist[I_ZERO] = zero
    ist[I_SN] = sn
    if status == ST_STOPPED:
        ist[I_STOP] = 1
    return status


@njit(cache=True)
def rebuild_values(x0, drift, dt, beta, xi, sds, eta, step_drift, jptr, jz, out):
    """Recompute grid values with the same arithmetic as ``run_chunk``."""
    sq = np.sqrt(2.0 * beta * dt)
    x = x0
    out[0] = x
    for j in range(xi.size):
        d = drift + step_drift[j] if step_drift.size else drift
        p = continuous_step(x, d, dt, sq, xi[j], sds, eta[j])
        for q in range(jptr[j], jptr[j + 1]):
            p += jz[q]
        x = p
        out[j + 1] = x


@njit(cache=True)
def height_pass(values, jptr, jz, beta, bar, gm, gs, out_h, out_csum):
    """Exploration-stack height along a stored path.

    ``jptr`` is indexed by grid point: jumps at point ``i`` are
    ``jz[jptr[i]:jptr[i+1]]``. Returns the maximal stack depth, or ``-1`` when
    the provided stack buffers are too small.
    """
    fst = np.zeros(N_FSTATE)
    ist = np.zeros(N_ISTATE, dtype=np.int64)
    fst[F_X] = values[0]
    fst[F_GMIN] = values[0]
    out_h[0] = 0.0
    out_csum[0] = 0.0
    depth = 0
    for i in range(1, values.size):
        s = 0.0
        for q in range(jptr[i], jptr[i + 1]):
            s += jz[q]
        pre = values[i] - s
        nj = jptr[i + 1] - jptr[i]
        if ist[I_NE] + nj > bar.size:
            return -1
        stack_lower(pre, fst, ist, bar, gm, gs)
        p = pre
        for q in range(jptr[i], jptr[i + 1]):
            stack_push(p, jz[q], fst, ist, bar, gm, gs)
            p += jz[q]
        stack_lower(values[i], fst, ist, bar, gm, gs)
        fst[F_X] = values[i]
        out_h[i] = height_value(fst, beta)
        out_csum[i] = fst[F_CSUM]
        if ist[I_NE] > depth:
            depth = ist[I_NE]
    return depth


@njit(cache=True)
def augmented_points(values, jptr, jz):
    """Interleave pre-jump and intermediate post-jump values with grid values.

    Returns the augmented value array, the augmented position of each grid
    point, and for every jump its augmented position and pre-jump value.
    """
    n = values.size
    nj = jz.size
    m = n + (n - 1) + nj
    aug = np.empty(m)
    gpos = np.empty(n, dtype=np.int64)
    jpos = np.empty(nj, dtype=np.int64)
    jpre = np.empty(nj)
    aug[0] = values[0]
    gpos[0] = 0
    w = 1
    for i in range(1, n):
        s = 0.0
        for q in range(jptr[i], jptr[i + 1]):
            s += jz[q]
        p = values[i] - s
        aug[w] = p
        w += 1
        for q in range(jptr[i], jptr[i + 1]):
            jpre[q] = p
            p += jz[q]
            aug[w] = p
            jpos[q] = w
            w += 1
        # the grid point itself (equal to the last post-jump value)
        aug[w] = values[i]
        gpos[i] = w
        w += 1
    return aug[:w], gpos, jpos, jpre


@njit(cache=True)
def brute_height(aug, gpos, jpos, jpre, jz, beta, out):
    """Evaluate the clamp-sum formula directly with a backward minimum scan."""
    nj = jz.size
    for i in range(gpos.size):
        s = gpos[i]
        run = aug[s]
        q = nj - 1
        while q >= 0 and jpos[q] > s:
            q -= 1
        clamp = 0.0
        for u in range(s, -1, -1):
            if aug[u] < run:
                run = aug[u]
            while q >= 0 and jpos[q] == u:
                # inf over [r, s] of X with X_r the post-jump value at u
                v = jz[q] + run - aug[u]
                if v > 0.0:
                    clamp += v
                q -= 1
        gmin = run
        h = (aug[s] - gmin - clamp) / beta
        out[i] = h if h > 0.0 else 0.0


@njit(cache=True)
def clamps_at(aug, gpos, jpos, jz, s_index, z_low, z_high, out):
    """Per-jump clamp ``(z + inf_[r,s] X - X_r)^+`` at grid index ``s_index``."""
    s = gpos[s_index]
    run = aug[s]
    q = jz.size - 1
    while q >= 0 and jpos[q] > s:
        out[q] = 0.0
        q -= 1
    for u in range(s, -1, -1):
        if aug[u] < run:
            run = aug[u]
        while q >= 0 and jpos[q] == u:
            z = jz[q]
            v = z + run - aug[u]
            out[q] = v if (v > 0.0 and z > z_low and z <= z_high) else 0.0
            q -= 1
    while q >= 0:
        out[q] = 0.0
        q -= 1


@njit(cache=True)
def tanaka_sum(values, h, jptr, jz, t, s_index):
    """``-sum 1{H_(k-1) >= t} dX_k`` over steps up to ``s_index``."""
    acc = 0.0
    for k in range(1, s_index + 1):
        if h[k - 1] >= t:
            acc -= values[k] - values[k - 1]
    return acc


@njit(cache=True)
def occupation_counts(h, delta, nbins, checkpoints, out, overflow, boundary):
    """Cumulative bin counts of grid points ``0..c-1`` for each checkpoint ``c``."""
    counts = np.zeros(nbins, dtype=np.int64)
    over = 0
    zero = 0
    c = 0
    for i in range(h.size + 1):
        while c < checkpoints.size and checkpoints[c] == i:
            for q in range(nbins):
                out[c, q] = counts[q]
            overflow[c] = over
            boundary[c] = zero
            c += 1
        if i == h.size:
            break
        if h[i] == 0.0:
            zero += 1
            continue
        b = int(h[i] / delta)
        if b < nbins:
            counts[b] += 1
        else:
            over += 1


@njit(cache=True)
def replay_feedback(h, gmin_prev, xi, dt, delta, fp_h, fp_tab, a_level, sn_level, freeze_at_sn, n_steps, out_c):
    """Recompute the feedback drift along a stored height path, as ``run_chunk`` does.

    Returns ``(sum c sqrt(dt) xi, sum c^2 dt, guard index)``.
    """
    nb = int(np.max(h[:n_steps + 1]) / delta) + 2 if n_steps >= 0 else 1
    counts = np.zeros(nb, dtype=np.int64)
    sqdt = np.sqrt(dt)
    db = 0.0
    dd = 0.0
    sn = -1
    for k in range(1, n_steps + 1):
        hprev = h[k - 1]
        b = int(hprev / delta)
        if hprev == 0.0:
            lhat = -gmin_prev[k]
        else:
            lhat = counts[b] * dt / delta
        if sn < 0 and lhat >= sn_level:
            sn = k - 1
        c = table_interp(fp_h, fp_tab, lhat)
        if hprev > a_level:
            c -= hprev - a_level
        out_c[k - 1] = c
        if not (freeze_at_sn and sn >= 0):
            db += c * sqdt * xi[k - 1]
            dd += c * c * dt
        if hprev != 0.0:
            counts[b] += 1
    return db, dd, sn
