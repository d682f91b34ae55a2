"""Flat ``key = value`` configuration with dotted keys.

Every key has a documented default; a run is described by the resolved
mapping, which is also what CSV headers record and what the run id hashes.
"""
from __future__ import annotations

import hashlib
import math
from pathlib import Path

from ..errors import ConfigurationError
from ..grid_fem import Box, ConductivitySet
from ..ionic import FitzHughNagumo
from ..nsolve import METHODS, NonlinearSolveSpec
from ..sparse_la import LinearSolveSpec
from ..timeloop import SimulationConfig, StimulusProtocol

VERSION = "0.1.0"

DEFAULTS: dict[str, object] = {
    "grid.n": (16, 16, 16),
    "grid.lengths": (0.5, 0.5, 0.5),
    "fibers.endo": -math.pi / 3,
    "fibers.epi": math.pi / 3,
    "sigma.l_i": 3.0e-3,
    "sigma.t_i": 3.1525e-4,
    "sigma.n_i": 3.1525e-4,
    "sigma.l_e": 2.0e-3,
    "sigma.t_e": 1.3514e-3,
    "sigma.n_e": 1.3514e-3,
    "ischemia.enabled": False,
    "ischemia.box": (0.25, 0.25, 0.0, 0.75, 0.75, 1.0),
    "ischemia.scale": 0.5,
    "ionic.k": 8.0,
    "ionic.a": 0.1,
    "ionic.eps": 0.01,
    "ionic.gamma": 0.5,
    "chi": 1000.0,
    "cm": 1.0,
    "tau": 0.05,
    "t_end": 1.0,
    "enforce_dt_bound": True,
    "stimulus.amplitude": 2000.0,
    "stimulus.start": 0.0,
    "stimulus.duration": 1.0,
    "stimulus.box": (0.0, 0.0, 0.0, 0.25, 0.25, 0.25),
    "snes.type": "newton",
    "snes.atol": 1e-12,
    "snes.rtol": 1e-6,
    "snes.stol": 0.0,
    "snes.max_it": 2000,
    "snes.qn_m": 5,
    "snes.ncg_type": "fr",
    "snes.ngmres_m": 10,
    "snes.ew_rtol0": 0.1,
    "snes.jaclow_inner_it": 10,
    "ksp.rtol": 1e-8,
    "ksp.max_it": 1000,
    "pc.type": "gmg",
    "threads": 1,
    "sweep.methods": METHODS,
    "sweep.grids": (16, 24, 32, 48),
    "sweep.threads": (1, 2, 4, 8),
    "sweep.imex_n": (1, 2, 4),
    "sweep.reference_factor": 256,
    "sweep.imex_grid": 8,
}

# Box coordinates are fractions of the domain lengths.
_FRACTION_KEYS = ("ischemia.box", "stimulus.box")


def parse_value(text: str, like: object):
    """Parse ``text`` to the type of the default ``like``."""
    text = text.strip()
    if isinstance(like, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"expected a boolean, got {text!r}")
    if isinstance(like, tuple):
        parts = [p for p in text.replace(" ", "").split(",") if p]
        proto = like[0] if like else ""
        return tuple(parse_value(p, proto) for p in parts)
    try:
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
    except ValueError:
        raise ConfigurationError(f"cannot parse {text!r} as {type(like).__name__}") from None
    return text


def parse_assignments(lines, source: str = "<set>") -> dict[str, object]:
    out = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigurationError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = parse_value(val, DEFAULTS[key])
    return out


def read_config_file(path) -> dict[str, object]:
    path = Path(path)
    return parse_assignments(path.read_text().splitlines(), str(path))


def resolve(*layers: dict) -> dict[str, object]:
    """Defaults overlaid by each layer in order; unknown keys are rejected."""
    out = dict(DEFAULTS)
    for layer in layers:
        for key, val in layer.items():
            if key not in DEFAULTS:
                raise ConfigurationError(f"unknown key {key!r}")
            out[key] = val
    validate(out)
    return out


def validate(cfg: dict):
    if cfg["snes.type"] not in METHODS:
        raise ConfigurationError(f"snes.type must be one of {', '.join(METHODS)}")
    for m in cfg["sweep.methods"]:
        if m not in METHODS:
            raise ConfigurationError(f"unknown method {m!r} in sweep.methods")
    if len(cfg["grid.n"]) != 3 or len(cfg["grid.lengths"]) != 3:
        raise ConfigurationError("grid.n and grid.lengths need three entries")
    for key in _FRACTION_KEYS:
        if len(cfg[key]) != 6:
            raise ConfigurationError(f"{key} needs six entries (lo xyz, hi xyz)")


def run_id(cfg: dict) -> str:
    text = "\n".join(f"{k}={cfg[k]!r}" for k in sorted(cfg))
    return hashlib.sha1(text.encode()).hexdigest()[:12]


def _box(fracs, lengths) -> Box:
    lo = tuple(f * l for f, l in zip(fracs[:3], lengths))
    hi = tuple(f * l + 1e-12 for f, l in zip(fracs[3:], lengths))
    return Box(lo, hi)


def nonlinear_spec(cfg: dict, **override) -> NonlinearSolveSpec:
    linear = LinearSolveSpec(rtol=cfg["ksp.rtol"], max_it=cfg["ksp.max_it"], preconditioner=cfg["pc.type"])
    spec = NonlinearSolveSpec(
        method=cfg["snes.type"],
        atol=cfg["snes.atol"],
        rtol=cfg["snes.rtol"],
        stol=cfg["snes.stol"],
        max_it=cfg["snes.max_it"],
        qn_m=cfg["snes.qn_m"],
        ncg_beta=cfg["snes.ncg_type"],
        ngmres_m=cfg["snes.ngmres_m"],
        ew_rtol0=cfg["snes.ew_rtol0"],
        jaclow_inner_it=cfg["snes.jaclow_inner_it"],
        linear=linear,
    )
    return spec.replace(**override) if override else spec


def simulation_config(cfg: dict, abort_on_failure: bool = False, **spec_override) -> SimulationConfig:
    lengths = tuple(float(x) for x in cfg["grid.lengths"])
    cond = ConductivitySet(
        sigma_l_i=cfg["sigma.l_i"],
        sigma_t_i=cfg["sigma.t_i"],
        sigma_n_i=cfg["sigma.n_i"],
        sigma_l_e=cfg["sigma.l_e"],
        sigma_t_e=cfg["sigma.t_e"],
        sigma_n_e=cfg["sigma.n_e"],
        ischemic_box=_box(cfg["ischemia.box"], lengths) if cfg["ischemia.enabled"] else None,
        ischemic_scale=cfg["ischemia.scale"],
    )
    model = FitzHughNagumo(k=cfg["ionic.k"], a=cfg["ionic.a"], eps=cfg["ionic.eps"], gamma=cfg["ionic.gamma"])
    stim = StimulusProtocol(
        _box(cfg["stimulus.box"], lengths),
        amplitude=cfg["stimulus.amplitude"],
        start=cfg["stimulus.start"],
        duration=cfg["stimulus.duration"],
    )
    return SimulationConfig(
        n=tuple(int(x) for x in cfg["grid.n"]),
        lengths=lengths,
        fiber_angles=(cfg["fibers.endo"], cfg["fibers.epi"]),
        conductivities=cond,
        model=model,
        chi=cfg["chi"],
        cm=cfg["cm"],
        tau=cfg["tau"],
        t_end=cfg["t_end"],
        stimulus=stim,
        nonlinear=nonlinear_spec(cfg, **spec_override),
        enforce_dt_bound=cfg["enforce_dt_bound"],
        abort_on_failure=abort_on_failure,
    )


def describe_defaults() -> str:
    return "\n".join(f"  {k} = {_fmt(v)}" for k, v in DEFAULTS.items())


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def format_value(v) -> str:
    return _fmt(v)
