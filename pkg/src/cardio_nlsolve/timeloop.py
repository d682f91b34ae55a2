"""Decoupled time stepping: gating update, then the nonlinear PDE solve.

Step ``n`` (from ``t_{n-1}`` to ``t_n = t_{n-1} + tau``):

1. ``w^n = gating_step(v^{n-1}, w^{n-1}, tau)``
2. applied currents from the stimulus protocol,
3. ``u^n`` from the nonlinear solver, warm-started at ``u^{n-1}``,
4. gauge projection of ``u_e`` and a :class:`StepRecord`.
"""
from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .bidomain import BidomainProblem, MonodomainProblem, StateBox
from .errors import ConfigurationError, StepFailure
from .grid_fem import Box, ConductivitySet, StructuredGrid, assemble_mass, assemble_stiffness, build_grid, rotated_fibers
from .ionic import FitzHughNagumo, IonicModel
from .nsolve import NonlinearSolveSpec, SolveTrace, solve

__all__ = [
    "StimulusProtocol",
    "SimulationConfig",
    "StepRecord",
    "SimulationResult",
    "run",
    "build_problem",
    "save_checkpoint",
    "load_checkpoint",
    "imex_compare",
    "bochner_error",
]

CHECKPOINT_MAGIC = b"CNLS0001"
_HEADER = struct.Struct("<8s4Id")


@dataclass(frozen=True)
class StimulusProtocol:
    """Applied current ``I_i = +amplitude``, ``I_e = -amplitude`` inside ``region``.

    A step is stimulated when its midpoint lies in ``[start, start + duration)``,
    so the protocol is resolved consistently under step refinement.
    """

    region: Box
    amplitude: float = 2000.0
    start: float = 0.0
    duration: float = 1.0

    def __post_init__(self):
        if not self.duration > 0:
            raise ConfigurationError("stimulus duration must be positive")

    def active(self, t_prev: float, tau: float) -> bool:
        mid = t_prev + 0.5 * tau
        return self.start <= mid < self.start + self.duration

    def indicator(self, grid: StructuredGrid) -> np.ndarray:
        inside = self.region.contains(grid.coordinates)
        if not inside.any():
            raise ConfigurationError("stimulus region contains no grid node")
        return inside.astype(float)

    def currents(self, grid: StructuredGrid, t_prev: float, tau: float):
        if not self.active(t_prev, tau):
            z = np.zeros(grid.n_nodes)
            return z, z.copy()
        ind = self.amplitude * self.indicator(grid)
        return ind, -ind


def default_stimulus(lengths) -> StimulusProtocol:
    """Corner box covering a quarter of each edge."""
    hi = tuple(0.25 * l + 1e-12 for l in lengths)
    return StimulusProtocol(Box((0.0, 0.0, 0.0), hi))


@dataclass
class SimulationConfig:
    n: tuple[int, int, int] = (16, 16, 16)
    lengths: tuple[float, float, float] = (0.5, 0.5, 0.5)
    fiber_angles: tuple[float, float] = (-np.pi / 3, np.pi / 3)
    conductivities: ConductivitySet = field(default_factory=ConductivitySet)
    model: IonicModel = field(default_factory=FitzHughNagumo)
    chi: float = 1000.0
    cm: float = 1.0
    tau: float = 0.05
    t_end: float = 1.0
    stimulus: StimulusProtocol | None = None
    nonlinear: NonlinearSolveSpec = field(default_factory=NonlinearSolveSpec)
    enforce_dt_bound: bool = True
    gauge: bool = True
    abort_on_failure: bool = True
    state_box: StateBox = field(default_factory=StateBox)

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigurationError("tau must be positive")
        if not self.t_end >= self.tau:
            raise ConfigurationError("t_end must be at least one step")
        if self.stimulus is None:
            self.stimulus = default_stimulus(self.lengths)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.tau))

    def grid(self) -> StructuredGrid:
        nx, ny, nz = self.n
        lx, ly, lz = self.lengths
        return build_grid(nx, ny, nz, lx / nx, ly / ny, lz / nz)


@dataclass
class StepRecord:
    time: float
    nonlinear_its: int
    inner_its: int
    solve_time: float
    residual_norm: float
    restarts: int = 0
    converged: bool = True
    step_time: float = 0.0


@dataclass
class SimulationResult:
    records: list[StepRecord]
    x: np.ndarray
    w: np.ndarray
    problem: BidomainProblem
    traces: list[SolveTrace] = field(default_factory=list)
    gauge_max: float = 0.0

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.records)

    @property
    def v(self) -> np.ndarray:
        return self.problem.transmembrane(self.x)

    def average_iterations(self) -> float:
        return float(np.mean([r.nonlinear_its for r in self.records]))

    def total_inner(self) -> int:
        return int(sum(r.inner_its for r in self.records))


def build_problem(config: SimulationConfig) -> BidomainProblem:
    grid = config.grid()
    fibers = rotated_fibers(grid, *config.fiber_angles)
    return BidomainProblem(
        grid,
        fibers,
        config.conductivities,
        config.model,
        chi=config.chi,
        cm=config.cm,
        tau=config.tau,
        gauge=config.gauge,
        state_box=config.state_box,
    )


def check_dt_bound(problem, tau: float):
    bound = problem.convexity_timestep_bound()
    if tau > bound:
        raise ConfigurationError(
            f"tau = {tau} exceeds the convexity bound {bound:.6g} ms; "
            "disable enforce_dt_bound to run anyway"
        )
    return bound


class _GaugeWatch:
    """Wraps a problem so every projected iterate's mean(u_e) is observed."""

    def __init__(self, problem):
        self._p = problem
        self.worst = 0.0

    def __getattr__(self, name):
        return getattr(self._p, name)

    def project(self, x):
        x = self._p.project(x)
        if self._p.gauge:
            n = self._p.n_nodes
            self.worst = max(self.worst, abs(float(x[n:].mean())))
        return x


def run(
    config: SimulationConfig,
    state: tuple[int, float, np.ndarray, np.ndarray] | None = None,
    n_steps: int | None = None,
    on_step: Callable[[int, StepRecord, np.ndarray, np.ndarray], None] | None = None,
    keep_traces: bool = False,
) -> SimulationResult:
    """Advance the Bidomain system; ``state = (n, t, x, w)`` resumes a run."""
    problem = build_problem(config)
    if config.enforce_dt_bound:
        check_dt_bound(problem, config.tau)
    grid = problem.grid
    if state is None:
        n0, t = 0, 0.0
        x = np.zeros(problem.size)
        w = config.model.initial_gating(np.full(grid.n_nodes, config.model.v_ref))
    else:
        n0, t, x, w = state
        x = np.array(x, dtype=float)
        w = np.array(w, dtype=float)
    steps = config.n_steps - n0 if n_steps is None else n_steps
    watch = _GaugeWatch(problem)
    records, traces = [], []
    tau = config.tau
    for k in range(n0 + 1, n0 + steps + 1):
        start = time.perf_counter()
        v_prev = problem.transmembrane(x)
        w = config.model.gating_step(v_prev, w, tau)
        i_i, i_e = config.stimulus.currents(grid, t, tau)
        problem.set_step(v_prev, w, i_i, i_e)
        t0 = time.perf_counter()
        x_new, trace = solve(watch, config.nonlinear, x)
        solve_time = time.perf_counter() - t0
        x = problem.project(x_new)
        t = k * tau
        rec = StepRecord(
            time=t,
            nonlinear_its=trace.iterations,
            inner_its=trace.total_inner,
            solve_time=solve_time,
            residual_norm=trace.final_norm,
            restarts=trace.restarts,
            converged=trace.converged,
            step_time=time.perf_counter() - start,
        )
        records.append(rec)
        if keep_traces:
            traces.append(trace)
        if on_step is not None:
            on_step(k, rec, x, w)
        if not trace.converged and config.abort_on_failure:
            raise StepFailure(
                f"nonlinear solve ({config.nonlinear.method}) failed at step {k}: {trace.reason}",
                step=k,
                trace=trace,
            )
    return SimulationResult(records, x, w, problem, traces, watch.worst)


# --------------------------------------------------------------- checkpoints


def save_checkpoint(path, grid: StructuredGrid, tau: float, n: int, t: float, x, w) -> None:
    """Little-endian binary: 32-byte header, then n, t, u_i, u_e, w."""
    w = np.atleast_2d(np.asarray(w, dtype="<f8"))
    header = _HEADER.pack(CHECKPOINT_MAGIC, grid.nx, grid.ny, grid.nz, w.shape[0], float(tau))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(struct.pack("<qd", int(n), float(t)))
        fh.write(np.asarray(x, dtype="<f8").tobytes())
        fh.write(w.tobytes())


def load_checkpoint(path):
    """Return ``(dims, tau, n, t, x, w)``; raises ValueError on a foreign file."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size + 16:
        raise ValueError("checkpoint truncated")
    magic, nx, ny, nz, n_w, tau = _HEADER.unpack_from(data, 0)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"bad checkpoint magic {magic!r}")
    n, t = struct.unpack_from("<qd", data, _HEADER.size)
    n_nodes = (nx + 1) * (ny + 1) * (nz + 1)
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size + 16)
    if body.size != (2 + n_w) * n_nodes:
        raise ValueError("checkpoint size does not match its header")
    x = body[: 2 * n_nodes].copy()
    w = body[2 * n_nodes :].reshape(n_w, n_nodes).copy()
    if n_w == 1:
        w = w[0]
    return (nx, ny, nz), tau, n, t, x, w


# -------------------------------------------------------------- IMEX study


def h1_matrix(grid: StructuredGrid):
    """Gram matrix of the H1 inner product (mass + isotropic unit stiffness)."""
    fib = rotated_fibers(grid, 0.0, 0.0)
    return assemble_mass(grid) + assemble_stiffness(grid, fib, (1.0, 1.0, 1.0))


def bochner_error(G, tau: float, traj, ref) -> float:
    """Discrete L2(0,T;H1) norm ``sqrt(tau sum ||e^n||^2_H1)`` over matching samples."""
    total = 0.0
    for a, b in zip(traj, ref):
        e = a - b
        total += float(e @ (G @ e))
    return float(np.sqrt(tau * total))


def run_monodomain(config: SimulationConfig, mode: str, tau: float, sample_every: int = 1):
    """Monodomain trajectory ``[v^k]`` sampled every ``sample_every`` steps.

    Returns ``(samples, cpu_per_step, total_cpu)``.
    """
    grid = config.grid()
    fibers = rotated_fibers(grid, *config.fiber_angles)
    prob = MonodomainProblem(
        grid, fibers, config.conductivities, config.model, chi=config.chi, cm=config.cm, tau=tau, mode=mode
    )
    spec = config.nonlinear.replace(method="newton")
    steps = int(round(config.t_end / tau))
    v = np.full(grid.n_nodes, config.model.v_ref)
    w = config.model.initial_gating(v)
    samples = []
    t = 0.0
    t0 = time.process_time()
    for k in range(1, steps + 1):
        w = config.model.gating_step(v, w, tau)
        i_i, _ = config.stimulus.currents(grid, t, tau)
        prob.set_step(v, w, i_i)
        v, trace = solve(prob, spec, v)
        if not trace.converged:
            raise StepFailure(f"monodomain {mode} solve failed at step {k}", step=k, trace=trace)
        t = k * tau
        if k % sample_every == 0:
            samples.append(v.copy())
    total = time.process_time() - t0
    return samples, total / steps, total


@dataclass
class ImexReport:
    tau: float
    reference_factor: int
    implicit_error: float
    imex_errors: dict[int, float]
    cpu_per_step: dict[str, float]
    total_cpu: dict[str, float]
    matching_n: int | None

    def rows(self):
        yield ("implicit", 1, self.implicit_error, self.cpu_per_step["implicit"], self.total_cpu["implicit"])
        for n, e in self.imex_errors.items():
            key = f"imex/{n}"
            yield ("imex", n, e, self.cpu_per_step[key], self.total_cpu[key])


def imex_compare(config: SimulationConfig, ns=(1, 2, 4), reference_factor: int = 256, slack: float = 1.1) -> ImexReport:
    """Implicit at ``tau`` against IMEX at ``tau / N`` on a fine implicit reference.

    ``matching_n`` is the smallest N with ``err(IMEX, tau/N) <= slack * err(implicit, tau)``.
    """
    tau = config.tau
    grid = config.grid()
    G = h1_matrix(grid)
    ref, _, _ = run_monodomain(config, "implicit", tau / reference_factor, reference_factor)
    imp, c_imp, t_imp = run_monodomain(config, "implicit", tau)
    errs, cpu, tot = {}, {"implicit": c_imp}, {"implicit": t_imp}
    e_imp = bochner_error(G, tau, imp, ref)
    for n in ns:
        traj, c, t = run_monodomain(config, "explicit", tau / n, n)
        errs[n] = bochner_error(G, tau, traj, ref)
        cpu[f"imex/{n}"] = c
        tot[f"imex/{n}"] = t
    matching = next((n for n in sorted(errs) if errs[n] <= slack * e_imp), None)
    return ImexReport(tau, reference_factor, e_imp, errs, cpu, tot, matching)


def self_convergence(config: SimulationConfig, taus, reference_factor: int = 64):
    """Bochner errors of the Bidomain ``v`` at each tau against ``taus[0] / reference_factor``.

    All step sizes must divide ``taus[0]``; errors are sampled on the ``taus[0]`` grid.
    """
    coarse = taus[0]
    fine = coarse / reference_factor
    grid = config.grid()
    G = h1_matrix(grid)

    def trajectory(tau):
        every = int(round(coarse / tau))
        out = []
        cfg = _with(config, tau=tau)

        def keep(k, rec, x, w):
            if k % every == 0:
                out.append(x[: grid.n_nodes] - x[grid.n_nodes :])

        run(cfg, on_step=keep)
        return out

    ref = trajectory(fine)
    return [bochner_error(G, coarse, trajectory(t), ref) for t in taus]


def _with(config: SimulationConfig, **kw) -> SimulationConfig:
    return replace(config, **kw)
