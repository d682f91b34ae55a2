"""Experiment suites: tuning, robustness, full beat, threads, traces, IMEX."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import sparse_la
from ..timeloop import SimulationResult, build_problem, imex_compare, run
from . import config as C
from .report import (
    IMEX_COLUMNS,
    THREAD_COLUMNS,
    TIMESTEP_COLUMNS,
    TRACE_COLUMNS,
    TUNING_COLUMNS,
    CsvReport,
    write_csv,
)

EXPERIMENTS = {
    "tuning": "inewton ew_rtol0 in {0.5, 0.1, 0.01, 0.001}; qn_preonly/qn_jaclow m in {2, 5, 10, 20}; "
    "ngmres m in {1, 2, 5, 10}; ncg beta in {fr, prp, dy, cd}; plus newton. One summary CSV.",
    "robustness_size": "grids sweep.grids (default 16,24,32,48 elements per edge, fixed domain) "
    "x sweep.methods; one timestep CSV per run.",
    "robustness_ischemia": "healthy and ischemic (ischemia.box, coefficients x ischemia.scale) "
    "x sweep.methods; paired timestep CSVs.",
    "full_beat": "t_end defaults to 100 ms for this kind; every method in sweep.methods.",
    "thread_scaling": "sweep.threads (default 1,2,4,8) on the snes.type run; S_p = T_1/T_p, E_p = T_1/(p T_p).",
    "convergence_trace": "residual history of every method on the first stimulated step; one CSV per method.",
    "imex": "monodomain implicit at tau vs IMEX at tau/N, N in sweep.imex_n, on a "
    "sweep.imex_grid^3 mesh against a tau/sweep.reference_factor implicit reference.",
}

FULL_BEAT_T_END = 100.0

TUNING_GRID = (
    [("newton", {}, "-")]
    + [("inewton", {"ew_rtol0": r}, f"ew_rtol0={r}") for r in (0.5, 0.1, 0.01, 0.001)]
    + [(m, {"qn_m": k}, f"m={k}") for m in ("qn_preonly", "qn_jaclow") for k in (2, 5, 10, 20)]
    + [("ngmres", {"ngmres_m": k}, f"m={k}") for k in (1, 2, 5, 10)]
    + [("ncg", {"ncg_beta": b}, f"beta={b}") for b in ("fr", "prp", "dy", "cd")]
)


@dataclass
class ExperimentOutput:
    files: list[Path] = field(default_factory=list)
    converged: bool = True
    summary: dict = field(default_factory=dict)


def base_header(cfg: dict, kind: str) -> dict[str, str]:
    header = {"artifact_version": C.VERSION, "experiment": kind, "run_id": C.run_id(cfg)}
    for key in sorted(cfg):
        header[key] = C.format_value(cfg[key])
    sim = C.simulation_config(cfg)
    header["dt_bound"] = repr(build_problem(sim).convexity_timestep_bound())
    header["initial_guess"] = "warm start from the previous step"
    return header


def timestep_report(cfg: dict, kind: str, result: SimulationResult, wall: float, **extra) -> CsvReport:
    header = base_header(cfg, kind)
    header.update({k: C.format_value(v) for k, v in extra.items()})
    header["converged"] = "true" if result.converged else "false"
    header["total_step_time"] = repr(sum(r.step_time for r in result.records))
    header["total_solve_time"] = repr(sum(r.solve_time for r in result.records))
    header["wall_time"] = repr(wall)
    header["average_its"] = repr(result.average_iterations())
    rows = [(r.time, r.nonlinear_its, r.inner_its, r.solve_time, r.residual_norm) for r in result.records]
    return CsvReport(header, TIMESTEP_COLUMNS, rows)


def _run(cfg: dict, **spec_override):
    sim = C.simulation_config(cfg, **spec_override)
    t0 = time.perf_counter()
    res = run(sim)
    return res, time.perf_counter() - t0


def _with(cfg: dict, **kw) -> dict:
    out = dict(cfg)
    for k, v in kw.items():
        out[k.replace("__", ".")] = v
    return out


def run_methods(cfg: dict, kind: str, out: Path, tag: str, result: ExperimentOutput):
    for method in cfg["sweep.methods"]:
        mcfg = _with(cfg, snes__type=method)
        res, wall = _run(mcfg)
        rep = timestep_report(mcfg, kind, res, wall, method=method)
        result.files.append(write_csv(out / f"{kind}_{tag}_{method}.csv", rep))
        result.converged &= res.converged
        result.summary[(tag, method)] = res.average_iterations()


def exp_tuning(cfg, out):
    res_out = ExperimentOutput()
    rows = []
    for method, override, label in TUNING_GRID:
        mcfg = _with(cfg, snes__type=method)
        res, _ = _run(mcfg, **override)
        cpu = sum(r.solve_time for r in res.records)
        rows.append((method, label, res.average_iterations(), res.total_inner(), cpu, res.converged))
        res_out.converged &= res.converged
        res_out.summary[(method, label)] = (res.average_iterations(), cpu)
    rep = CsvReport(base_header(cfg, "tuning"), TUNING_COLUMNS, rows)
    res_out.files.append(write_csv(out / "tuning_summary.csv", rep))
    return res_out


def exp_robustness_size(cfg, out):
    res_out = ExperimentOutput()
    for n in cfg["sweep.grids"]:
        run_methods(_with(cfg, grid__n=(n, n, n)), "robustness_size", out, f"{n}", res_out)
    return res_out


def exp_robustness_ischemia(cfg, out):
    res_out = ExperimentOutput()
    for tag, flag in (("healthy", False), ("ischemic", True)):
        run_methods(_with(cfg, ischemia__enabled=flag), "robustness_ischemia", out, tag, res_out)
    return res_out


def exp_full_beat(cfg, out, t_end_given: bool = False):
    if not t_end_given:
        cfg = _with(cfg, t_end=FULL_BEAT_T_END)
    res_out = ExperimentOutput()
    run_methods(cfg, "full_beat", out, "beat", res_out)
    return res_out


def thread_speedups(times: dict[int, float]) -> dict[int, tuple[float, float]]:
    """``S_p = T_1 / T_p`` and ``E_p = T_1 / (p T_p)``."""
    t1 = times[1]
    return {p: (t1 / t, t1 / (p * t)) for p, t in times.items()}


def exp_thread_scaling(cfg, out):
    res_out = ExperimentOutput()
    threads = sorted(set(cfg["sweep.threads"]) | {1})
    times = {}
    previous = sparse_la.get_num_threads()
    try:
        for p in threads:
            sparse_la.set_num_threads(p)
            res, _ = _run(cfg)
            times[p] = sum(r.solve_time for r in res.records)
            res_out.converged &= res.converged
    finally:
        sparse_la.set_num_threads(previous)
    sp_ = thread_speedups(times)
    rows = [(p, times[p], sp_[p][0], sp_[p][1]) for p in threads]
    header = base_header(cfg, "thread_scaling")
    header["note"] = "row-block parallel sparse products; speed-up bounded by available cores"
    res_out.files.append(write_csv(out / "thread_scaling.csv", CsvReport(header, THREAD_COLUMNS, rows)))
    res_out.summary = {p: sp_[p] for p in threads}
    return res_out


def first_step_problem(cfg):
    """Problem and initial iterate of the first stimulated step."""
    sim = C.simulation_config(cfg)
    prob = build_problem(sim)
    grid = prob.grid
    v0 = np.full(grid.n_nodes, sim.model.v_ref)
    w = sim.model.gating_step(v0, sim.model.initial_gating(v0), sim.tau)
    t = sim.stimulus.start
    i_i, i_e = sim.stimulus.currents(grid, t, sim.tau)
    prob.set_step(v0, w, i_i, i_e)
    return prob, np.zeros(prob.size), sim


def exp_convergence_trace(cfg, out):
    from ..nsolve import solve

    res_out = ExperimentOutput()
    prob, x0, _ = first_step_problem(cfg)
    for method in cfg["sweep.methods"]:
        spec = C.nonlinear_spec(cfg, method=method)
        _, trace = solve(prob, spec, x0)
        header = base_header(_with(cfg, snes__type=method), "convergence_trace")
        header["method"] = method
        header["converged"] = "true" if trace.converged else "false"
        header["reason"] = trace.reason
        rows = list(enumerate(trace.residual_norms))
        res_out.files.append(write_csv(out / f"convergence_trace_{method}.csv", CsvReport(header, TRACE_COLUMNS, rows)))
        res_out.converged &= trace.converged
        res_out.summary[method] = trace
    return res_out


def exp_imex(cfg, out):
    n = cfg["sweep.imex_grid"]
    mcfg = _with(cfg, grid__n=(n, n, n), snes__rtol=min(cfg["snes.rtol"], 1e-10))
    sim = C.simulation_config(mcfg)
    rep = imex_compare(sim, ns=tuple(cfg["sweep.imex_n"]), reference_factor=cfg["sweep.reference_factor"])
    header = base_header(mcfg, "imex")
    header["matching_n"] = str(rep.matching_n)
    header["reference_tau"] = repr(sim.tau / rep.reference_factor)
    res_out = ExperimentOutput(summary={"report": rep})
    res_out.files.append(write_csv(out / "imex.csv", CsvReport(header, IMEX_COLUMNS, list(rep.rows()))))
    return res_out


RUNNERS = {
    "tuning": exp_tuning,
    "robustness_size": exp_robustness_size,
    "robustness_ischemia": exp_robustness_ischemia,
    "full_beat": exp_full_beat,
    "thread_scaling": exp_thread_scaling,
    "convergence_trace": exp_convergence_trace,
    "imex": exp_imex,
}


def run_experiment(kind: str, overrides: dict | None = None, out=".") -> ExperimentOutput:
    if kind not in RUNNERS:
        raise C.ConfigurationError(f"unknown experiment {kind!r}; choose from {', '.join(RUNNERS)}")
    overrides = overrides or {}
    cfg = C.resolve(overrides)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if kind == "full_beat":
        return exp_full_beat(cfg, out, t_end_given="t_end" in overrides)
    return RUNNERS[kind](cfg, out)
