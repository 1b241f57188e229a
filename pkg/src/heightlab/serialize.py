"""CSV writers for paths, local-time fields, populations and weights."""
from __future__ import annotations

import csv
import hashlib
import math
from pathlib import Path

import numpy as np


def _num(v) -> str:
    return repr(float(v))


def write_levy_csv(path, levy, height=None):
    """Header comments ``dt, eps_sim, beta, alpha``; rows ``index, value, jump_size_or_0[, height]``.

    Several jumps sharing a grid step are reported as their sum.
    """
    jumps = levy.jump_totals()
    with open(path, "w", newline="") as fh:
        fh.write(f"# dt={_num(levy.dt)} eps_sim={_num(levy.eps_sim)} beta={_num(levy.beta)} "
                 f"alpha={_num(levy.alpha)}\n")
        w = csv.writer(fh)
        w.writerow(["index", "value", "jump_size"] + (["height"] if height is not None else []))
        for i, v in enumerate(levy.values):
            row = [i, _num(v), _num(jumps[i])]
            if height is not None:
                row.append(_num(height.values[i]))
            w.writerow(row)


def read_levy_csv(path):
    """Inverse of :func:`write_levy_csv`: returns ``(meta, index, value, jump, height or None)``."""
    with open(path) as fh:
        head = fh.readline().lstrip("# ").split()
        meta = {k: float(v) for k, v in (item.split("=") for item in head)}
        rows = list(csv.reader(fh))
    cols = rows[0]
    data = np.array(rows[1:], dtype=float)
    h = data[:, 3] if "height" in cols else None
    return meta, data[:, 0].astype(np.int64), data[:, 1], data[:, 2], h


def write_field_csv(path, field):
    """Rows ``level_bin_lower_edge, checkpoint_time, estimate``."""
    edges = field.lower_edges
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level_bin_lower_edge", "checkpoint_time", "estimate"])
        for c, t in enumerate(field.times):
            for b, e in enumerate(edges):
                w.writerow([_num(e), _num(t), _num(field.estimate[c][b])])


def write_population_csv(path, pop, replicates=None):
    """Rows ``replicate, time, x_label, Z``."""
    z = pop.Z
    reps = range(z.shape[1]) if replicates is None else replicates
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replicate", "time", "x_label", "Z"])
        for r in reps:
            for ti, t in enumerate(pop.times):
                for i, x in enumerate(pop.x_list):
                    w.writerow([r, _num(t), _num(x), _num(z[ti, r, i])])


def write_weight_csv(path, rows):
    """Weight sidecar: ``replicate, log_weight, S_x, reached``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replicate", "log_weight", "S_x", "reached"])
        for r, (lw, sx, reached) in enumerate(rows):
            w.writerow([r, _num(lw), _num(sx) if math.isfinite(sx) else "nan", int(bool(reached))])


def write_table_csv(path, header, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in row])


def digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def digests(directory, names) -> dict:
    d = Path(directory)
    return {n: digest(d / n) for n in sorted(names)}
