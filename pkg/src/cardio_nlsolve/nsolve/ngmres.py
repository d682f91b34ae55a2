"""Nonlinear GMRES: Richardson candidate plus residual-minimizing mixing."""
from __future__ import annotations

from collections import deque

import numpy as np

from .common import Monitor, NonlinearSolveSpec, project

GRAM_SHIFT = 1e-12


def mixing_weights(f_candidate: np.ndarray, f_window) -> np.ndarray:
    """Weights ``(alpha_1..alpha_k, alpha_M)`` minimizing the linearized residual.

    Minimizes ``|F_M + sum_i alpha_i (F_i - F_M)|`` and sets
    ``alpha_M = 1 - sum_i alpha_i``. The Gram matrix is shifted by
    ``1e-12 * max(diag)`` so a rank-deficient window stays solvable.
    """
    k = len(f_window)
    if k == 0:
        return np.ones(1)
    D = np.column_stack([fi - f_candidate for fi in f_window])
    G = D.T @ D
    shift = GRAM_SHIFT * max(float(np.max(np.diag(G))), np.finfo(float).tiny)
    alpha = np.linalg.solve(G + shift * np.eye(k), -(D.T @ f_candidate))
    weights = np.append(alpha, 1.0 - alpha.sum())
    return weights / weights.sum()


def ngmres_solve(sys, spec: NonlinearSolveSpec, x0):
    """Window of the previous ``ngmres_m - 1`` iterates mixed with ``x - F(x)``."""
    with np.errstate(over="ignore", invalid="ignore"):
        return _ngmres(sys, spec, x0)


def _ngmres(sys, spec, x0):
    x = project(sys, np.array(x0, dtype=float, copy=True))
    f = sys.residual(x)
    mon = Monitor(spec, f)
    window: deque = deque(maxlen=max(spec.ngmres_m - 1, 0))
    if spec.ngmres_m > 1:
        window.append((x, f))
    last_weights = np.ones(1)
    while not mon.check():
        x_m = project(sys, x - f)
        f_m = sys.residual(x_m)
        if window:
            w = mixing_weights(f_m, [fi for _, fi in window])
            x_a = w[-1] * x_m
            for wi, (xi, _) in zip(w[:-1], window):
                x_a = x_a + wi * xi
            x_a = project(sys, x_a)
            f_a = sys.residual(x_a)
            last_weights = w
            if np.linalg.norm(f_a) < np.linalg.norm(f_m):
                x_new, f_new = x_a, f_a
            else:
                x_new, f_new = x_m, f_m
                window.clear()
                mon.trace.restarts += 1
        else:
            x_new, f_new = x_m, f_m
        if spec.ngmres_m > 1:
            window.append((x_new, f_new))
        mon.record(np.linalg.norm(f_new), 0)
        stop = mon.step_small(x_new - x, x_new)
        x, f = x_new, f_new
        if stop:
            break
    mon.trace.info["last_weights"] = last_weights
    return x, mon.trace
