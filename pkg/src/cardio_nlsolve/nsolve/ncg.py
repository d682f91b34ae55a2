"""Nonlinear conjugate gradients on the residual (the gradient of the potential)."""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .common import Monitor, NonlinearSolveSpec, project

BETA_TINY = 1e-300

LineSearch = Callable[[np.ndarray, np.ndarray, np.ndarray], float]


def ncg_beta(rule: str, g_new: np.ndarray, g_old: np.ndarray, p: np.ndarray) -> Optional[float]:
    """Conjugacy coefficient for ``p_new = -g_new + beta p``.

    Returns ``None`` when the denominator is degenerate (caller restarts).
    """
    gg = float(g_new @ g_new)
    if rule == "fr":
        num, den = gg, float(g_old @ g_old)
    elif rule == "prp":
        num, den = float(g_new @ (g_new - g_old)), float(g_old @ g_old)
    elif rule == "dy":
        num, den = gg, float(p @ (g_new - g_old))
    elif rule == "cd":
        num, den = gg, -float(p @ g_old)
    else:
        raise ValueError(f"unknown beta rule {rule!r}")
    if abs(den) < BETA_TINY:
        return None
    return num / den


def ncg_solve(sys, spec: NonlinearSolveSpec, x0, line_search: LineSearch | None = None):
    """Full-step NCG with the ``spec.ncg_beta`` rule.

    ``line_search(x, p, g)`` may return a step length; it exists for testing
    the equivalence with linear CG and is not used in production runs.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        return _ncg(sys, spec, x0, line_search)


def _ncg(sys, spec, x0, line_search):
    x = project(sys, np.array(x0, dtype=float, copy=True))
    g = sys.residual(x)
    mon = Monitor(spec, g)
    p = -g
    while not mon.check():
        alpha = 1.0 if line_search is None else float(line_search(x, p, g))
        x_new = project(sys, x + alpha * p)
        g_new = sys.residual(x_new)
        beta = ncg_beta(spec.ncg_beta, g_new, g, p)
        if beta is None:
            beta = 0.0
            mon.trace.restarts += 1
        p = -g_new + beta * p
        mon.record(np.linalg.norm(g_new), 0)
        stop = mon.step_small(x_new - x, x_new)
        x, g = x_new, g_new
        if stop:
            break
    return x, mon.trace
