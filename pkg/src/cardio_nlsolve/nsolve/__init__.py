"""Nonlinear solvers for ``F(x) = 0`` with uniform termination semantics."""
from __future__ import annotations

import numpy as np

from .common import METHODS, NonlinearSolveSpec, NonlinearSystem, SolveTrace, fitted_order, require_jacobian
from .ncg import ncg_beta, ncg_solve
from .newton import eisenstat_walker, inexact_newton_solve, newton_solve
from .ngmres import mixing_weights, ngmres_solve
from .qn import dense_bfgs_inverse, lbfgs_direction, qn_solve

__all__ = [
    "METHODS",
    "NonlinearSolveSpec",
    "NonlinearSystem",
    "SolveTrace",
    "FunctionSystem",
    "solve",
    "newton_solve",
    "inexact_newton_solve",
    "qn_solve",
    "ngmres_solve",
    "ncg_solve",
    "lbfgs_direction",
    "dense_bfgs_inverse",
    "mixing_weights",
    "ncg_beta",
    "eisenstat_walker",
    "fitted_order",
]

_NEEDS_JACOBIAN = {"newton", "inewton", "qn_preonly", "qn_jaclow"}


class FunctionSystem:
    """Wrap plain callables as a nonlinear system (no gauge)."""

    def __init__(self, residual, size: int, jacobian=None):
        self._residual = residual
        self.size = int(size)
        if jacobian is not None:
            self.jacobian = jacobian

    def residual(self, x):
        r = np.asarray(self._residual(np.asarray(x, dtype=float)), dtype=float)
        if r.shape != (self.size,):
            raise ValueError(f"residual has shape {r.shape}, expected ({self.size},)")
        return r


def solve(sys, spec: NonlinearSolveSpec, x0):
    """Dispatch on ``spec.method``."""
    if spec.method in _NEEDS_JACOBIAN:
        require_jacobian(sys, spec.method)
    if spec.method == "newton":
        return newton_solve(sys, spec, x0)
    if spec.method == "inewton":
        return inexact_newton_solve(sys, spec, x0)
    if spec.method == "qn_preonly":
        return qn_solve(sys, spec, x0, "preonly")
    if spec.method == "qn_jaclow":
        return qn_solve(sys, spec, x0, "jaclow")
    if spec.method == "ngmres":
        return ngmres_solve(sys, spec, x0)
    return ncg_solve(sys, spec, x0)
