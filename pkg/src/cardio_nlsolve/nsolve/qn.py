"""Limited-memory BFGS with a multigrid initial inverse."""
from __future__ import annotations

import dataclasses
from collections import deque
from typing import Callable, Sequence

import numpy as np

from ..errors import LinearSolveBreakdown
from .common import Monitor, NonlinearSolveSpec, linear_tools, project, require_jacobian

CURVATURE_TOL = 1e-14


def admissible_pair(s: np.ndarray, y: np.ndarray) -> bool:
    """Curvature safeguard: keep the pair only if s.y > 1e-14 |s| |y|."""
    sy = float(s @ y)
    return sy > CURVATURE_TOL * np.linalg.norm(s) * np.linalg.norm(y)


def lbfgs_direction(
    history: Sequence[tuple[np.ndarray, np.ndarray]],
    g: np.ndarray,
    b0_action: Callable[[np.ndarray], np.ndarray],
) -> np.ndarray:
    """Return ``-H g`` by the two-loop recursion.

    ``history`` holds pairs ``(s, y)`` oldest first; ``b0_action`` applies the
    initial inverse ``H0``. Pairs failing the curvature safeguard are ignored.
    """
    pairs = [(s, y, 1.0 / float(s @ y)) for s, y in history if admissible_pair(s, y)]
    q = np.array(g, dtype=float, copy=True)
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * float(s @ q)
        q -= a * y
        alphas.append(a)
    r = np.asarray(b0_action(q), dtype=float)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * float(y @ r)
        r = r + (a - b) * s
    return -r


def dense_bfgs_inverse(H0: np.ndarray, history) -> np.ndarray:
    """Explicit inverse update ``H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T``."""
    H = np.array(H0, dtype=float, copy=True)
    n = H.shape[0]
    eye = np.eye(n)
    for s, y in history:
        if not admissible_pair(s, y):
            continue
        rho = 1.0 / float(s @ y)
        V = eye - rho * np.outer(y, s)
        H = V.T @ H @ V + rho * np.outer(s, s)
    return H


def initial_inverse(sys, J0, spec: NonlinearSolveSpec, mode: str):
    """``H0`` from the Jacobian at the initial iterate.

    ``preonly`` applies the preconditioner once; ``jaclow`` runs a fixed number
    of preconditioned CG iterations. Returns the action and a work counter.
    """
    prec, projector, linear = linear_tools(sys, J0, spec.linear)
    counter = {"applications": 0, "inner": 0}
    if mode == "preonly":
        linear = dataclasses.replace(linear, method="preonly")
    else:
        linear = dataclasses.replace(
            linear, method="cg", fixed_it=spec.jaclow_inner_it, rtol=0.0, atol=0.0
        )

    from ..sparse_la import pcg_solve

    def act(q):
        x, its, _ = pcg_solve(J0, q, linear, None, preconditioner=prec, projector=projector)
        counter["applications"] += 1
        counter["inner"] += its
        return x

    return act, counter


def qn_solve(sys, spec: NonlinearSolveSpec, x0, mode: str | None = None):
    """L-BFGS with full steps, window ``qn_m`` and no restarts."""
    if mode is None:
        mode = "jaclow" if spec.method == "qn_jaclow" else "preonly"
    if mode not in ("preonly", "jaclow"):
        raise ValueError(f"unknown quasi-Newton mode {mode!r}")
    require_jacobian(sys, spec.method)
    x = project(sys, np.array(x0, dtype=float, copy=True))
    f = sys.residual(x)
    mon = Monitor(spec, f)
    if mon.check():
        return x, mon.trace
    J0 = sys.jacobian(x)
    b0, counter = initial_inverse(sys, J0, spec, mode)
    history: deque = deque(maxlen=spec.qn_m)
    while True:
        before = counter["inner"]
        try:
            p = lbfgs_direction(history, f, b0)
        except LinearSolveBreakdown as exc:
            exc.outer_iteration = mon.trace.iterations
            raise
        x_new = project(sys, x + p)
        f_new = sys.residual(x_new)
        s, y = x_new - x, f_new - f
        if admissible_pair(s, y):
            history.append((s, y))
        else:
            mon.trace.skipped_pairs += 1
        inner = counter["inner"] - before
        mon.record(np.linalg.norm(f_new), inner if mode == "jaclow" else 1)
        stop = mon.step_small(s, x_new)
        x, f = x_new, f_new
        if stop or mon.check():
            break
    mon.trace.info["b0_applications"] = counter["applications"]
    return x, mon.trace
