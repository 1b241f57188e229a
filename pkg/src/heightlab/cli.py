"""Command-line experiment runner.

Every run writes ``manifest.json`` first (resolved config, version, seeding
rule), then its outputs, then completes the manifest with file digests and
wall-clock time. Exit codes: 0 success, 1 statistical failure, 2 configuration
error, 3 first passage not reached or run aborted.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import config as C
from . import serialize as io
from .csbp import simulate_csbp
from .height import height_from_path
from .interact import InteractConfig, run_interacting, simulate_reference
from .levypath import InjectionDepthError, NotReached, PathBudget, simulate_levy
from .loctime import local_time_occupation
from .mechanism import extinction_criterion, Extinction
from .seeding import seed_split
from .verify import (LEG_HEIGHT, LEG_POP, LEG_REF, InsufficientReached, bound_suite, compensation_identity,
                     girsanov_check, ray_knight_interacting, ray_knight_linear, truncation_convergence)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3
MAX_PATH_FILES = 20

SUBCOMMANDS = {
    "simulate-levy": "simulate driving Lévy paths on a fixed horizon",
    "simulate-height": "Lévy paths with their height process and local-time field",
    "simulate-csbp": "coupled population field Z^x on a fixed horizon",
    "simulate-interacting": "height process with local-time feedback, run to S_x",
    "verify-rayknight-linear": "local times at S_x vs the population with f(z) = -alpha z",
    "verify-rayknight-interacting": "interacting local times vs the population driven by f_b",
    "verify-bounds": "fluctuation, clamp and compensation checks",
    "verify-girsanov": "reweighted driftless runs vs direct interacting runs",
    "verify-truncation": "convergence of truncated paths along an eps schedule",
    "extinction-check": "integral test for almost sure extinction",
}


class _Out:
    """Collects output files of one run."""

    def __init__(self, directory: Path, formats: set):
        self.dir = directory
        self.formats = formats
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.dir / name

    @property
    def csv(self) -> bool:
        return "csv" in self.formats


def _interact_cfg(cfg) -> InteractConfig:
    mech = C.mechanism(cfg)
    fn = C.interaction(cfg)
    if not fn.bounded_derivative:
        raise C.ConfigError("interaction.b", f"a finite localisation level is required for f of kind {fn.kind}")
    return InteractConfig(f=fn, a=cfg["simulation.a"], beta=mech.beta, pi=mech.pi,
                          x_target=cfg["simulation.x_target"], dt=cfg["simulation.dt"],
                          eps_sim=cfg["simulation.eps_sim"], delta_t=cfg["simulation.delta_t"],
                          cap=cfg["simulation.cap"], small_jump_gauss=cfg["simulation.small_jump_gauss"])


def _seed(cfg):
    return cfg["run.seed"]


# ---------------------------------------------------------------- pipelines


def _simulate_paths(cfg, out: _Out, with_height: bool):
    mech = C.mechanism(cfg)
    dt, horizon = cfg["simulation.dt"], cfg["simulation.horizon"]
    rows = []
    for r in range(cfg["run.N"]):
        path = simulate_levy(mech, PathBudget(horizon=horizon), dt, cfg["simulation.eps_sim"],
                             seed_split(_seed(cfg), LEG_HEIGHT, r), cfg["simulation.small_jump_gauss"])
        h = height_from_path(path, mech.beta) if with_height else None
        if out.csv and r < MAX_PATH_FILES:
            io.write_levy_csv(out.path(f"path_{r:04d}.csv"), path, h)
            if h is not None:
                field = local_time_occupation(h, cfg["simulation.delta_t"], [path.n_steps * dt])
                io.write_field_csv(out.path(f"ltfield_{r:04d}.csv"), field)
        rows.append((r, float(path.values[-1]), float(path.running_inf()[-1]), int(path.jump_size.size),
                     float(h.values.max()) if h is not None else math.nan))
    if out.csv:
        cols = list(zip(*rows))
        io.write_table_csv(out.path("summary.csv"), ["replicate", "x_end", "inf_x", "n_jumps", "max_height"], cols)
    arr = np.array([row[1:] for row in rows], dtype=float)
    report = {"pipeline": "simulate-height" if with_height else "simulate-levy", "N": len(rows),
              "mean_x_end": float(arr[:, 0].mean()), "mean_inf_x": float(arr[:, 1].mean()),
              "mean_jumps": float(arr[:, 2].mean())}
    if with_height:
        report["mean_max_height"] = float(arr[:, 3].mean())
    return EXIT_OK, report


def run_simulate_levy(cfg, out):
    return _simulate_paths(cfg, out, False)


def run_simulate_height(cfg, out):
    return _simulate_paths(cfg, out, True)


def run_simulate_csbp(cfg, out):
    mech = C.mechanism(cfg)
    fn = C.interaction(cfg)
    horizon = cfg["simulation.horizon"]
    times = np.linspace(0.0, horizon, 21)
    pop = simulate_csbp(fn, mech, cfg["simulation.x_list"], horizon, cfg["simulation.dt_pop"],
                        cfg["simulation.eps_sim"], _seed(cfg), cfg["run.N"], record_times=times, leg=LEG_POP,
                        small_jump_gauss=cfg["simulation.small_jump_gauss"])
    if out.csv:
        io.write_population_csv(out.path("population.csv"), pop)
    z = pop.Z
    report = {"pipeline": "simulate-csbp", "N": cfg["run.N"], "times": pop.times.tolist(),
              "x_list": list(pop.x_list), "mean_Z": z.mean(axis=1).tolist(),
              "absorbed_fraction": pop.absorbed.mean(axis=0).tolist()}
    return EXIT_OK, report


def run_simulate_interacting(cfg, out):
    icfg = _interact_cfg(cfg)
    reference = cfg["simulation.reference"]
    rows, hmax = [], []
    for r in range(cfg["run.N"]):
        if reference:
            b = simulate_reference(icfg, seed_split(_seed(cfg), LEG_REF, r))
            lw = b.engine_log_weight
        else:
            b = run_interacting(icfg, seed_split(_seed(cfg), LEG_HEIGHT, r))
            lw = math.nan
        rows.append((lw, b.passage.time if b.passage.reached else math.nan, b.passage.reached))
        hmax.append(float(b.height.values.max()))
        if out.csv and r < MAX_PATH_FILES:
            io.write_levy_csv(out.path(f"path_{r:04d}.csv"), b.path, b.height)
            io.write_field_csv(out.path(f"ltfield_{r:04d}.csv"), b.field)
    if out.csv:
        io.write_weight_csv(out.path("weights.csv"), rows)
    reached = np.array([row[2] for row in rows])
    frac = float(reached.mean())
    report = {"pipeline": "simulate-interacting", "reference": reference, "N": len(rows),
              "reached_fraction": frac, "mean_max_height": float(np.mean(hmax)),
              "mean_S_x_reached": float(np.nanmean([row[1] for row in rows])) if reached.any() else None}
    if reference:
        report["mean_weight"] = float(np.mean(np.exp([row[0] for row in rows])))
    return (EXIT_OK if frac >= 0.9 else EXIT_ABORT), report


def _comparison(rep, out):
    if out.csv:
        cs = rep.coordinates
        io.write_table_csv(out.path("comparison.csv"),
                           ["coordinate", "mean_a", "mean_b", "se_a", "se_b", "z", "ks", "p_value", "passed"],
                           [[c.name for c in cs], [c.mean_a for c in cs], [c.mean_b for c in cs],
                            [c.se_a for c in cs], [c.se_b for c in cs], [c.z for c in cs], [c.ks for c in cs],
                            [c.p_value for c in cs], [int(c.passed) for c in cs]])
    (out.dir / "report.txt").write_text(rep.to_text() + "\n")
    out.files.append("report.txt")
    print(rep.to_text())
    return (EXIT_OK if rep.passed else EXIT_FAIL), rep.to_dict()


def run_verify_linear(cfg, out):
    rep = ray_knight_linear(C.mechanism(cfg), cfg["simulation.x_target"], cfg["simulation.levels"], cfg["run.N"],
                            cfg["simulation.dt"], cfg["simulation.eps_sim"], cfg["simulation.delta_t"], _seed(cfg),
                            dt_pop=cfg["simulation.dt_pop"], cap=cfg["simulation.cap"],
                            allowance=cfg["verify.allowance"], ks_tol=cfg["verify.ks_tol"],
                            n_perm=cfg["verify.permutations"], workers=cfg["run.workers"])
    return _comparison(rep, out)


def run_verify_interacting(cfg, out):
    rep = ray_knight_interacting(_interact_cfg(cfg), cfg["simulation.x_list"], cfg["simulation.levels"],
                                 cfg["run.N"], _seed(cfg), dt_pop=cfg["simulation.dt_pop"],
                                 allowance=cfg["verify.allowance"], ks_tol=cfg["verify.ks_tol"],
                                 n_perm=cfg["verify.permutations"], workers=cfg["run.workers"])
    return _comparison(rep, out)


def run_verify_girsanov(cfg, out):
    rep = girsanov_check(_interact_cfg(cfg), cfg["run.N"], _seed(cfg), workers=cfg["run.workers"])
    return _comparison(rep, out)


def run_verify_bounds(cfg, out):
    mech = C.mechanism(cfg)
    eps = cfg["simulation.eps_sim"]
    checks = bound_suite(mech, cfg["simulation.s_list"], cfg["simulation.x_grid"], cfg["simulation.z_grid"],
                         cfg["run.N"], _seed(cfg), dt=cfg["simulation.dt"], eps_sim=eps,
                         workers=cfg["run.workers"])
    rows = [{"kind": c.kind, **c.params, "empirical": c.empirical, "stderr": c.stderr, "bound": c.bound,
             "passed": c.passed} for c in checks]
    report = {"pipeline": "verify-bounds", "checks": rows}
    passed = all(c.passed for c in checks)
    if not mech.pi.is_zero:
        lo = 0.0 if mech.pi.tail(0.0) - mech.pi.tail(eps) <= 0 else eps
        comp = compensation_identity(mech, cfg["simulation.horizon"], lo, math.inf, cfg["run.N"],
                                     cfg["simulation.dt"], eps, _seed(cfg), workers=cfg["run.workers"])
        report["compensation"] = comp
        passed = passed and comp["overlap"]
    report["passed"] = passed
    if out.csv:
        io.write_table_csv(out.path("bounds.csv"), ["kind", "s", "x_or_z", "empirical", "stderr", "bound", "passed"],
                           [[c.kind for c in checks], [c.params["s"] for c in checks],
                            [float(c.params.get("x", c.params.get("z", c.params.get("lo", math.nan))))
                             for c in checks],
                            [c.empirical for c in checks], [c.stderr for c in checks], [c.bound for c in checks],
                            [int(c.passed) for c in checks]])
    for c in rows:
        print(f"{c['kind']:<14}{json.dumps({k: c[k] for k in c if k in ('s', 'x', 'z', 'lo', 'hi')}):<30}"
              f"{c['empirical']:>10.4f} <= {c['bound']:.4f}  {'yes' if c['passed'] else 'NO'}")
    return (EXIT_OK if passed else EXIT_FAIL), report


def run_verify_truncation(cfg, out):
    rep = truncation_convergence(C.mechanism(cfg), cfg["simulation.eps_schedule"], cfg["simulation.horizon"],
                                 cfg["run.N"], _seed(cfg), dt=cfg["simulation.dt"],
                                 x_pass=cfg["simulation.x_target"], workers=cfg["run.workers"])
    if out.csv:
        io.write_table_csv(out.path("truncation.csv"), ["eps", "mean_sup", "stderr", "envelope", "passage_prob"],
                           [rep["eps"], rep["mean_sup"], rep["stderr"], rep["envelope"], rep["passage_prob"]])
    for e, m, s, v in zip(rep["eps"], rep["mean_sup"], rep["stderr"], rep["envelope"]):
        print(f"eps={e:<8g} E sup|X - X^eps| = {m:.4f} +- {s:.4f}   envelope {v:.4f}")
    return (EXIT_OK if rep["passed"] else EXIT_FAIL), dict(rep, pipeline="verify-truncation")


def run_extinction(cfg, out):
    fn = C.interaction(cfg)
    res = extinction_criterion(fn, cfg["mechanism.beta"])
    print(res.value)
    return (EXIT_FAIL if res is Extinction.INCONCLUSIVE else EXIT_OK), {"pipeline": "extinction-check",
                                                                        "f": fn.describe(), "result": res.value}


PIPELINES = {
    "simulate-levy": run_simulate_levy,
    "simulate-height": run_simulate_height,
    "simulate-csbp": run_simulate_csbp,
    "simulate-interacting": run_simulate_interacting,
    "verify-rayknight-linear": run_verify_linear,
    "verify-rayknight-interacting": run_verify_interacting,
    "verify-bounds": run_verify_bounds,
    "verify-girsanov": run_verify_girsanov,
    "verify-truncation": run_verify_truncation,
    "extinction-check": run_extinction,
}


# ---------------------------------------------------------------- driver


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value file, or a manifest.json to replay")
    common.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], dest="overrides",
                        help="override one key (repeatable, last wins)")
    common.add_argument("--workers", type=int, metavar="N", help="worker processes (default $HEIGHTLAB_WORKERS or 1)")
    common.add_argument("--output", metavar="DIR", help="output directory")
    common.add_argument("--format", choices=("csv", "json"), help="restrict outputs to one format")
    p = argparse.ArgumentParser(prog="heightlab", description=__doc__.splitlines()[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter, epilog=C.help_text())
    p.add_argument("--version", action="version", version=f"heightlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")
    for name, desc in SUBCOMMANDS.items():
        sub.add_parser(name, parents=[common], help=desc, description=desc,
                       formatter_class=argparse.RawDescriptionHelpFormatter, epilog=C.help_text())
    return p


def _resolve(args):
    layers = []
    if args.config:
        try:
            layers.append(C.load_file(args.config))
        except OSError as e:
            raise C.ConfigError("--config", str(e)) from None
    layers.append(C.parse_overrides(args.overrides))
    flags = {}
    if args.workers is not None:
        flags["run.workers"] = str(args.workers)
    if args.output:
        flags["output.directory"] = args.output
    if args.format:
        flags["output.formats"] = args.format
    layers.append(flags)
    return C.resolve(*layers)


def _manifest_seeds(cfg, command):
    legs = {"height": LEG_HEIGHT, "population": LEG_POP, "reference": LEG_REF}
    w = cfg["run.workers"]
    blocks = [[r0, min(cfg["run.N"], r0 + 250)] for r0 in range(0, cfg["run.N"], 250)]
    return {"master": cfg["run.seed"], "rule": "stream = seed_split(master, leg, replicate)", "legs": legs,
            "workers": [{"worker": i, "blocks": blocks[i::w]} for i in range(w)]}


def _write_json(path: Path, doc):
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve(args)
    except C.ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    outdir = Path(cfg["output.directory"])
    outdir.mkdir(parents=True, exist_ok=True)
    formats = set(cfg["output.formats"].replace(" ", "").split(","))
    manifest = {"command": args.command, "config": C.to_jsonable(cfg), "version": __version__,
                "seeds": _manifest_seeds(cfg, args.command),
                "started": _dt.datetime.now(_dt.timezone.utc).isoformat(), "status": "running"}
    _write_json(outdir / "manifest.json", manifest)
    out = _Out(outdir, formats)
    t0 = time.perf_counter()
    try:
        code, report = PIPELINES[args.command](cfg, out)
    except C.ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        code, report = EXIT_CONFIG, {"error": str(e)}
    except (InsufficientReached, NotReached, InjectionDepthError) as e:
        print(f"aborted: {e}", file=sys.stderr)
        code, report = EXIT_ABORT, {"error": str(e)}
    except ValueError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        code, report = EXIT_CONFIG, {"error": str(e)}
    report = dict(report, exit_code=code)
    _write_json(outdir / "report.json", report)
    out.files.append("report.json")
    names = sorted(set(out.files))
    dig = io.digests(outdir, names)
    manifest.update(status="complete", exit_code=code, wall_clock_s=round(time.perf_counter() - t0, 3),
                    digests=dig)
    _write_json(outdir / "manifest.json", manifest)
    if io.digests(outdir, names) != dig:
        print("output digests changed during completion", file=sys.stderr)
        return EXIT_ABORT
    return code


def replay_matches(manifest_path, output_dir) -> bool:
    """Re-run a manifest into ``output_dir`` and compare every output digest."""
    doc = json.loads(Path(manifest_path).read_text())
    code = main([doc["command"], "--config", str(manifest_path), "--output", str(output_dir), "--workers", "1"])
    new = json.loads((Path(output_dir) / "manifest.json").read_text())
    return code == doc["exit_code"] and new["digests"] == doc["digests"]


if __name__ == "__main__":
    sys.exit(main())
