"""Flat ``section.key = value`` experiment configuration.

A config file holds one assignment per line; ``#`` starts a comment. Keys are
validated against :data:`SCHEMA` before anything runs, and unknown keys are
rejected. A ``manifest.json`` written by a previous run is also accepted and
replays that run's resolved configuration.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

from .measures import measure_from_dict
from .mechanism import Mechanism, interaction_from_dict


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key, msg):
        super().__init__(f"{key}: {msg}")
        self.key = key


@dataclass(frozen=True)
class Key:
    name: str
    kind: str  # float, int, bool, str, floats, atoms
    default: object
    unit: str
    help: str
    check: str = ""  # pos, nonneg, ge1, or a choice list "a|b|c"


SCHEMA = [
    Key("mechanism.alpha", "float", 0.0, "1/time", "linear drift coefficient alpha of psi"),
    Key("mechanism.beta", "float", 1.0, "1/time", "diffusion coefficient beta of psi", "pos"),
    Key("mechanism.pi.kind", "str", "zero", "-", "Lévy measure family", "zero|atoms|stable|exponential"),
    Key("mechanism.pi.atoms", "atoms", None, "size:mass", "atoms as 'z1:m1, z2:m2' (kind=atoms)"),
    Key("mechanism.pi.index", "float", None, "-", "stable index in (1, 2) (kind=stable)"),
    Key("mechanism.pi.scale", "float", None, "mass", "density prefactor (kind=stable|exponential)", "pos"),
    Key("mechanism.pi.cutoff", "float", None, "size", "largest jump size (kind=stable)", "pos"),
    Key("mechanism.pi.rate", "float", None, "1/size", "exponential decay rate (kind=exponential)", "pos"),
    Key("mechanism.pi.power", "float", 0.0, "-", "density z^(-1-power) exp(-rate z), power < 2 (kind=exponential)"),
    Key("interaction.f.kind", "str", "linear", "-", "interaction function f",
        "linear|logistic|polynomial|custom-table"),
    Key("interaction.f.alpha", "float", None, "1/time", "f(z) = -alpha z (kind=linear); default mechanism.alpha"),
    Key("interaction.f.growth", "float", 1.0, "1/time", "f(z) = growth z - competition z^2 (kind=logistic)"),
    Key("interaction.f.competition", "float", 1.0, "1/(time mass)", "logistic competition (kind=logistic)"),
    Key("interaction.f.coeffs", "floats", None, "-", "f(z) = sum c_k z^(k+1) (kind=polynomial)"),
    Key("interaction.f.z", "floats", None, "mass", "table abscissae (kind=custom-table)"),
    Key("interaction.f.fprime", "floats", None, "1/time", "table values of f' (kind=custom-table)"),
    Key("interaction.theta", "float", None, "1/time", "declared sup of f'; checked against f if given"),
    Key("interaction.b", "float", math.inf, "mass", "localisation level b of f_b", "pos"),
    Key("simulation.dt", "float", 1e-4, "time", "exploration time step", "pos"),
    Key("simulation.dt_pop", "float", 1e-3, "time", "population Euler step", "pos"),
    Key("simulation.eps_sim", "float", 0.01, "size", "jump truncation level", "pos"),
    Key("simulation.delta_t", "float", 0.02, "level", "local-time level bin width", "pos"),
    Key("simulation.horizon", "float", 1.0, "time", "fixed horizon for path and population runs", "pos"),
    Key("simulation.x_target", "float", 1.0, "mass", "first-passage target x of S_x", "pos"),
    Key("simulation.x_list", "floats", (0.5, 1.0), "mass", "masses for coupled comparisons"),
    Key("simulation.levels", "floats", (0.25, 0.5), "level", "level checkpoints t"),
    Key("simulation.a", "float", 1.0, "level", "reflection-drift level a of g_a", "pos"),
    Key("simulation.cap", "float", 1000.0, "time", "time budget before NotReached", "pos"),
    Key("simulation.small_jump_gauss", "bool", True, "-", "Gaussian stand-in for jumps below eps_sim"),
    Key("simulation.s_list", "floats", (0.25, 0.5, 1.0, 2.0), "time", "times s for bound checks"),
    Key("simulation.x_grid", "floats", (0.1, 0.25, 0.5, 1.0), "mass", "x values for fluctuation bounds"),
    Key("simulation.z_grid", "floats", (0.1, 0.25, 0.5, 1.0), "size", "z values for clamp bounds"),
    Key("simulation.eps_schedule", "floats", (0.5, 0.25, 0.1), "size", "decreasing truncation levels"),
    Key("simulation.reference", "bool", False, "-", "simulate-interacting: driftless reference run + weight"),
    Key("verify.allowance", "float", 0.05, "mass", "bias allowance added to 3 stderr", "nonneg"),
    Key("verify.ks_tol", "float", 0.05, "-", "KS distance threshold", "pos"),
    Key("verify.permutations", "int", 200, "-", "permutations for KS p-values", "nonneg"),
    Key("run.N", "int", 5000, "replicates", "ensemble size (simulate-*: number of paths)", "ge1"),
    Key("run.seed", "int", 0, "-", "master seed", "nonneg"),
    Key("run.workers", "int", None, "processes", "worker processes (default $HEIGHTLAB_WORKERS or 1)", "ge1"),
    Key("output.directory", "str", "heightlab-out", "path", "output directory"),
    Key("output.formats", "str", "csv,json", "-", "comma list from {csv, json}"),
]
KEYS = {k.name: k for k in SCHEMA}


def _parse_value(key: Key, raw):
    if not isinstance(raw, str):
        return raw
    s = raw.strip()
    try:
        if key.kind == "float":
            return float(s)
        if key.kind == "int":
            return int(s)
        if key.kind == "bool":
            if s.lower() in ("1", "true", "yes", "on"):
                return True
            if s.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(s)
        if key.kind == "floats":
            return tuple(float(v) for v in s.replace(";", ",").split(",") if v.strip())
        if key.kind == "atoms":
            out = []
            for part in s.split(","):
                z, m = part.split(":")
                out.append((float(z), float(m)))
            return tuple(out)
    except ValueError:
        raise ConfigError(key.name, f"cannot parse {raw!r} as {key.kind}") from None
    return s


def parse_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", "expected 'key = value'")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_file(path) -> dict:
    p = Path(path)
    text = p.read_text()
    if p.suffix == ".json":
        doc = json.loads(text)
        return dict(doc.get("config", doc))
    return parse_text(text)


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def resolve(*layers: dict) -> dict:
    """Merge raw layers (later wins), fill defaults and validate."""
    raw = {}
    for layer in layers:
        for k, v in layer.items():
            if k not in KEYS:
                raise ConfigError(k, "unknown key (see --help for the list)")
            raw[k] = v
    cfg = {}
    for key in SCHEMA:
        val = _parse_value(key, raw[key.name]) if key.name in raw else key.default
        if isinstance(val, list):
            val = tuple(tuple(v) if isinstance(v, list) else v for v in val)
        cfg[key.name] = val
    if cfg["run.workers"] is None:
        env = os.environ.get("HEIGHTLAB_WORKERS")
        cfg["run.workers"] = _parse_value(KEYS["run.workers"], env) if env else 1
    validate(cfg)
    return cfg


def validate(cfg: dict):
    for key in SCHEMA:
        v = cfg[key.name]
        if v is None:
            continue
        if key.kind == "float" and isinstance(v, float) and math.isnan(v):
            raise ConfigError(key.name, "must be a number")
        if key.check == "pos" and not v > 0:
            raise ConfigError(key.name, f"must be positive, got {v}")
        if key.check == "nonneg" and not v >= 0:
            raise ConfigError(key.name, f"must be nonnegative, got {v}")
        if key.check == "ge1" and not v >= 1:
            raise ConfigError(key.name, f"must be at least 1, got {v}")
        if "|" in key.check and v not in key.check.split("|"):
            raise ConfigError(key.name, f"must be one of {key.check.replace('|', ', ')}, got {v!r}")
    for name in ("simulation.x_list", "simulation.levels", "simulation.s_list"):
        vals = cfg[name]
        if not vals or any(b <= a for a, b in zip(vals, vals[1:])):
            raise ConfigError(name, "must be a nonempty strictly increasing list")
    if any(v <= 0 for v in cfg["simulation.x_list"]):
        raise ConfigError("simulation.x_list", "masses must be positive")
    if any(v < 0 for v in cfg["simulation.levels"]):
        raise ConfigError("simulation.levels", "levels must be nonnegative")
    fmts = set(cfg["output.formats"].replace(" ", "").split(","))
    if not fmts or not fmts <= {"csv", "json"}:
        raise ConfigError("output.formats", "must be a comma list from {csv, json}")
    try:
        mechanism(cfg)
    except ConfigError:
        raise
    except (ValueError, KeyError, TypeError) as e:
        raise ConfigError("mechanism.pi", str(e)) from None
    try:
        fn = interaction(cfg)
    except ConfigError:
        raise
    except (ValueError, KeyError, TypeError) as e:
        raise ConfigError("interaction.f", str(e)) from None
    th = cfg["interaction.theta"]
    if th is not None and not math.isclose(th, fn.theta, rel_tol=1e-9, abs_tol=1e-12):
        raise ConfigError("interaction.theta", f"declared {th} but f gives {fn.theta}")


def _need(cfg, name):
    v = cfg[name]
    if v is None:
        raise ConfigError(name, "required for the chosen kind")
    return v


def measure_spec(cfg: dict) -> dict:
    kind = cfg["mechanism.pi.kind"]
    spec = {"kind": kind}
    if kind == "atoms":
        spec["atoms"] = [tuple(a) for a in _need(cfg, "mechanism.pi.atoms")]
    elif kind == "stable":
        spec.update(index=_need(cfg, "mechanism.pi.index"), scale=_need(cfg, "mechanism.pi.scale"),
                    cutoff=cfg["mechanism.pi.cutoff"])
    elif kind == "exponential":
        spec.update(rate=_need(cfg, "mechanism.pi.rate"), scale=_need(cfg, "mechanism.pi.scale"),
                    power=cfg["mechanism.pi.power"])
    return spec


def mechanism(cfg: dict) -> Mechanism:
    return Mechanism(cfg["mechanism.alpha"], cfg["mechanism.beta"], measure_from_dict(measure_spec(cfg)))


def interaction(cfg: dict):
    kind = cfg["interaction.f.kind"]
    spec = {"kind": kind, "b": cfg["interaction.b"]}
    if kind == "linear":
        a = cfg["interaction.f.alpha"]
        spec["alpha"] = cfg["mechanism.alpha"] if a is None else a
    elif kind == "logistic":
        spec.update(growth=cfg["interaction.f.growth"], competition=cfg["interaction.f.competition"])
    elif kind == "polynomial":
        spec["coeffs"] = list(_need(cfg, "interaction.f.coeffs"))
    else:
        spec.update(z=list(_need(cfg, "interaction.f.z")), fprime=list(_need(cfg, "interaction.f.fprime")))
    return interaction_from_dict(spec)


def to_jsonable(cfg: dict) -> dict:
    out = {}
    for k, v in cfg.items():
        if isinstance(v, float) and math.isinf(v):
            v = "inf"
        elif isinstance(v, tuple):
            v = [list(x) if isinstance(x, tuple) else x for x in v]
        out[k] = v
    return out


def help_text() -> str:
    rows = ["configuration keys (set in --config files or with --set key=value):"]
    for k in SCHEMA:
        d = "" if k.default is None else f" [default {_fmt_default(k.default)}]"
        rows.append(f"  {k.name:<28} ({k.unit}) {k.help}{d}")
    return "\n".join(rows)


def _fmt_default(v):
    if isinstance(v, tuple):
        return ",".join(f"{x:g}" for x in v)
    return str(v)
