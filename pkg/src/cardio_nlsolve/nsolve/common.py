from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol, runtime_checkable

import numpy as np

from ..errors import CapabilityError, ConfigurationError
from ..sparse_la import LinearSolveSpec, jacobi_preconditioner, pcg_solve

METHODS = ("newton", "inewton", "qn_preonly", "qn_jaclow", "ngmres", "ncg")
NCG_BETAS = ("fr", "prp", "dy", "cd")


@runtime_checkable
class NonlinearSystem(Protocol):
    """Minimal capability: a residual of fixed dimension ``size``.

    Optional: ``jacobian(x)``, ``project(x)`` (gauge hook applied to every
    iterate), ``preconditioner(J, kind)`` and ``linear_projector``.
    """

    size: int

    def residual(self, x: np.ndarray) -> np.ndarray: ...


@dataclass
class NonlinearSolveSpec:
    method: str = "newton"
    atol: float = 1e-12
    rtol: float = 1e-6
    stol: float = 0.0
    max_it: int = 2000
    qn_m: int = 5
    ncg_beta: str = "fr"
    ngmres_m: int = 10
    ew_rtol0: float = 0.1
    jaclow_inner_it: int = 10
    linear: LinearSolveSpec = field(default_factory=LinearSolveSpec)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown nonlinear method {self.method!r}")
        if self.ncg_beta not in NCG_BETAS:
            raise ConfigurationError(f"unknown NCG beta rule {self.ncg_beta!r}")
        if self.qn_m < 1 or self.ngmres_m < 1:
            raise ConfigurationError("history lengths must be >= 1")
        if not 0.0 < self.ew_rtol0 < 1.0:
            raise ConfigurationError("ew_rtol0 must lie in (0, 1)")
        if self.max_it < 0:
            raise ConfigurationError("max_it must be >= 0")
        if self.jaclow_inner_it < 1:
            raise ConfigurationError("jaclow_inner_it must be >= 1")

    def replace(self, **kw) -> "NonlinearSolveSpec":
        return dataclasses.replace(self, **kw)


@dataclass
class SolveTrace:
    residual_norms: list[float] = field(default_factory=list)
    inner_iterations: list[int] = field(default_factory=list)
    converged: bool = False
    reason: str = "max_it"
    restarts: int = 0
    skipped_pairs: int = 0
    info: dict[str, Any] = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return len(self.residual_norms) - 1

    @property
    def total_inner(self) -> int:
        return int(sum(self.inner_iterations))

    @property
    def final_norm(self) -> float:
        return self.residual_norms[-1]


class Monitor:
    """Uniform atol/rtol/max_it bookkeeping shared by all methods."""

    def __init__(self, spec: NonlinearSolveSpec, f0: np.ndarray):
        self.spec = spec
        self.trace = SolveTrace()
        self.norm0 = float(np.linalg.norm(f0))
        self.trace.residual_norms.append(self.norm0)

    def check(self) -> bool:
        """True when the solve should stop; sets converged/reason."""
        t, s = self.trace, self.spec
        fn = t.residual_norms[-1]
        if not np.isfinite(fn):
            t.converged, t.reason = False, "breakdown"
            return True
        if fn <= s.atol:
            t.converged, t.reason = True, "atol"
            return True
        if fn <= s.rtol * self.norm0:
            t.converged, t.reason = True, "rtol"
            return True
        if t.iterations >= s.max_it:
            t.converged, t.reason = False, "max_it"
            return True
        return False

    def record(self, fnorm: float, inner: int = 0):
        self.trace.residual_norms.append(float(fnorm))
        self.trace.inner_iterations.append(int(inner))

    def step_small(self, step: np.ndarray, x: np.ndarray) -> bool:
        if self.spec.stol > 0 and np.linalg.norm(step) <= self.spec.stol * np.linalg.norm(x):
            self.trace.converged, self.trace.reason = True, "stol"
            return True
        return False


def project(sys, x: np.ndarray) -> np.ndarray:
    proj = getattr(sys, "project", None)
    return x if proj is None else proj(x)


def require_jacobian(sys, method: str):
    if not callable(getattr(sys, "jacobian", None)):
        raise CapabilityError(f"method {method!r} needs a Jacobian, which the system lacks")


def linear_tools(sys, J, linear: LinearSolveSpec):
    """Preconditioner action, projector and a spec consistent with them."""
    make = getattr(sys, "preconditioner", None)
    if make is not None:
        prec = make(J, linear.preconditioner)
    elif linear.preconditioner == "jacobi":
        prec = jacobi_preconditioner(J)
    elif linear.preconditioner == "none":
        prec = lambda r: r  # noqa: E731
    else:
        raise CapabilityError("system provides no multigrid preconditioner")
    projector = getattr(sys, "linear_projector", None)
    spec = dataclasses.replace(linear, project_nullspace=projector is not None)
    return prec, projector, spec


def linear_solve(J, b, linear: LinearSolveSpec, prec, projector) -> tuple[np.ndarray, int, float]:
    return pcg_solve(J, b, linear, None, preconditioner=prec, projector=projector)


ResidualFn = Callable[[np.ndarray], np.ndarray]


def fitted_order(norms, pairs: int = 3, floor: float = 1e-13) -> float:
    """Least-squares slope of ``log r_{k+1}`` against ``log r_k`` over the last ``pairs`` pairs.

    Norms below ``floor * norms[0]`` sit at round-off level and are dropped.
    """
    r = np.asarray(norms, dtype=float)
    r = r[r > floor * r[0]]
    if len(r) < 3:
        raise ValueError("need at least three residual norms above the round-off floor")
    lr = np.log(r)
    x, y = lr[:-1][-pairs:], lr[1:][-pairs:]
    return float(np.polyfit(x, y, 1)[0])
