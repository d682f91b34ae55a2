"""Newton-MG and inexact Newton with Eisenstat-Walker forcing."""
from __future__ import annotations

import dataclasses

import numpy as np

from ..errors import LinearSolveBreakdown
from .common import Monitor, NonlinearSolveSpec, linear_solve, linear_tools, project, require_jacobian

EW_MIN = 1e-6
EW_MAX = 0.9


def eisenstat_walker(fnorm: float, fnorm_prev: float, linear_residual_prev: float) -> float:
    """Choice 1: | ||F_k|| - ||F_{k-1} + J_{k-1} dx_{k-1}|| | / ||F_{k-1}||, clipped."""
    eta = abs(fnorm - linear_residual_prev) / fnorm_prev
    return float(min(max(eta, EW_MIN), EW_MAX))


def _newton(sys, spec: NonlinearSolveSpec, x0, inexact: bool):
    require_jacobian(sys, spec.method)
    x = project(sys, np.array(x0, dtype=float, copy=True))
    f = sys.residual(x)
    mon = Monitor(spec, f)
    eta = spec.ew_rtol0
    etas = []
    lin_res = None
    fnorm_prev = None
    while not mon.check():
        fnorm = mon.trace.residual_norms[-1]
        if inexact and lin_res is not None:
            eta = eisenstat_walker(fnorm, fnorm_prev, lin_res)
        J = sys.jacobian(x)
        prec, projector, linear = linear_tools(sys, J, spec.linear)
        if inexact:
            linear = dataclasses.replace(linear, rtol=eta, atol=0.0, fixed_it=None)
            etas.append(eta)
        try:
            dx, its, lin_res = linear_solve(J, -f, linear, prec, projector)
        except LinearSolveBreakdown as exc:
            exc.outer_iteration = mon.trace.iterations
            raise
        x_new = project(sys, x + dx)
        fnorm_prev = fnorm
        f = sys.residual(x_new)
        mon.record(np.linalg.norm(f), its)
        if mon.step_small(x_new - x, x_new):
            x = x_new
            break
        x = x_new
    if inexact:
        mon.trace.info["forcing"] = etas
        mon.trace.info["forcing_formula"] = "ew1: |‖F_k‖ − ‖F_{k−1} + J_{k−1}Δx_{k−1}‖| / ‖F_{k−1}‖"
    return x, mon.trace


def newton_solve(sys, spec: NonlinearSolveSpec, x0):
    """Full-step Newton; each tangent system solved by PCG at ``spec.linear``."""
    return _newton(sys, spec, x0, inexact=False)


def inexact_newton_solve(sys, spec: NonlinearSolveSpec, x0):
    """Newton with adaptive linear tolerance (Eisenstat-Walker choice 1)."""
    return _newton(sys, spec, x0, inexact=True)
