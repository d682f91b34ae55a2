"""Sparse kernels, preconditioned CG and a geometric multigrid V-cycle.

CSR storage and the raw sparse product are delegated to ``scipy.sparse``;
the Krylov and multigrid algorithms live here.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ConfigurationError, LinearSolveBreakdown
from .grid_fem import StructuredGrid

__all__ = [
    "CsrMatrix",
    "LinearSolveSpec",
    "GmgHierarchy",
    "as_csr",
    "spmv",
    "set_num_threads",
    "get_num_threads",
    "pcg_solve",
    "jacobi_preconditioner",
    "build_gmg",
    "gmg_vcycle",
    "prolongation_1d",
    "mean_projector",
]

CsrMatrix = sp.csr_matrix
Preconditioner = Callable[[np.ndarray], np.ndarray]

_threads = 1
_pool: ThreadPoolExecutor | None = None
_row_blocks: dict[int, list] = {}


def set_num_threads(n: int) -> None:
    """Number of worker threads used by :func:`spmv` (row-block parallelism)."""
    global _threads, _pool
    if n < 1:
        raise ConfigurationError("thread count must be >= 1")
    if _pool is not None:
        _pool.shutdown()
        _pool = None
    _threads = int(n)
    _row_blocks.clear()
    if _threads > 1:
        _pool = ThreadPoolExecutor(max_workers=_threads)


def get_num_threads() -> int:
    return _threads


def as_csr(A) -> sp.csr_matrix:
    """Canonical CSR copy: sorted column indices, no duplicates."""
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.sort_indices()
    return A


def spmv(A: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    if A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: A is {A.shape}, x has length {x.shape[0]}")
    if _threads == 1 or A.shape[0] < 4 * _threads:
        return A @ x
    key = id(A)
    blocks = _row_blocks.get(key)
    if blocks is None or blocks[0] is not A:
        edges = np.linspace(0, A.shape[0], _threads + 1).astype(int)
        blocks = [A, [A[a:b] for a, b in zip(edges[:-1], edges[1:])]]
        _row_blocks[key] = blocks
    parts = list(_pool.map(lambda B: B @ x, blocks[1]))
    return np.concatenate(parts)


@dataclass
class LinearSolveSpec:
    """Inner linear solver controls; ``fixed_it`` overrides the tolerances."""

    method: str = "cg"
    preconditioner: str = "gmg"
    rtol: float = 1e-8
    atol: float = 0.0
    max_it: int = 1000
    fixed_it: int | None = None
    project_nullspace: bool = False

    def __post_init__(self):
        if self.method not in ("cg", "preonly"):
            raise ConfigurationError(f"unknown linear method {self.method!r}")
        if self.preconditioner not in ("none", "jacobi", "gmg"):
            raise ConfigurationError(f"unknown preconditioner {self.preconditioner!r}")
        if self.rtol < 0 or self.atol < 0:
            raise ConfigurationError("tolerances must be non-negative")
        if self.max_it < 1:
            raise ConfigurationError("max_it must be positive")
        if self.fixed_it is not None and self.fixed_it < 1:
            raise ConfigurationError("fixed_it must be positive")


def mean_projector(start: int = 0, stop: int | None = None) -> Callable[[np.ndarray], np.ndarray]:
    """Projector removing the mean of ``x[start:stop]``."""

    def project(x):
        x = np.array(x, dtype=float, copy=True)
        seg = x[start:stop]
        seg -= seg.mean()
        return x

    return project


def jacobi_preconditioner(A) -> Preconditioner:
    d = np.asarray(A.diagonal(), dtype=float)
    if np.any(d == 0):
        raise ConfigurationError("Jacobi preconditioner needs a nonzero diagonal")
    inv = 1.0 / d
    return lambda r: inv * r


def _resolve_preconditioner(A, spec: LinearSolveSpec, preconditioner):
    if preconditioner is not None:
        return preconditioner
    if spec.preconditioner == "none":
        return lambda r: r
    if spec.preconditioner == "jacobi":
        return jacobi_preconditioner(A)
    raise ConfigurationError("gmg preconditioner requires an explicit hierarchy action")


def pcg_solve(
    A,
    b: np.ndarray,
    spec: LinearSolveSpec,
    x0: np.ndarray | None = None,
    preconditioner: Preconditioner | None = None,
    projector: Callable[[np.ndarray], np.ndarray] | None = None,
) -> tuple[np.ndarray, int, float]:
    """Preconditioned CG on the true residual ``b - A x``.

    Returns ``(x, iterations, ||b - A x||)``. With ``spec.method == 'preonly'``
    a single preconditioner application ``x = B b`` is returned with zero
    iterations. ``projector`` (or the whole-vector mean projector when
    ``spec.project_nullspace`` is set) is applied to b, to every preconditioned
    residual and to the iterate, so CG runs on ``Q A Q`` restricted to range(Q).
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"dimension mismatch: A is {A.shape}, b has length {n}")
    apply_B = _resolve_preconditioner(A, spec, preconditioner)
    if spec.project_nullspace:
        Q = projector if projector is not None else mean_projector()
    else:
        Q = None

    def matvec(v):
        return spmv(A, v) if sp.issparse(A) else A @ v

    if Q is not None:
        b = Q(b)
    if spec.method == "preonly":
        x = apply_B(b)
        if Q is not None:
            x = Q(x)
        r = b - matvec(x)
        if Q is not None:
            r = Q(r)
        return x, 0, float(np.linalg.norm(r))

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float, copy=True)
    if Q is not None:
        x = Q(x)
    r = b - matvec(x)
    if Q is not None:
        r = Q(r)
    rnorm = float(np.linalg.norm(r))
    target = max(spec.rtol * rnorm, spec.atol)
    limit = spec.fixed_it if spec.fixed_it is not None else spec.max_it
    if rnorm == 0.0 or (spec.fixed_it is None and rnorm <= target):
        return x, 0, rnorm

    z = apply_B(r)
    if Q is not None:
        z = Q(z)
    p = z.copy()
    rz = float(r @ z)
    its = 0
    while its < limit:
        Ap = matvec(p)
        if Q is not None:
            Ap = Q(Ap)
        pAp = float(p @ Ap)
        its += 1
        if pAp <= 0.0:
            raise LinearSolveBreakdown(its, pAp)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        rnorm = float(np.linalg.norm(r))
        if rnorm == 0.0 or (spec.fixed_it is None and rnorm <= target):
            break
        z = apply_B(r)
        if Q is not None:
            z = Q(z)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, its, rnorm


# ---------------------------------------------------------------------------
# geometric multigrid


def prolongation_1d(n_coarse: int) -> sp.csr_matrix:
    """Linear interpolation from n_coarse+1 to 2 n_coarse+1 nodes."""
    rows, cols, vals = [], [], []
    for i in range(n_coarse + 1):
        rows.append(2 * i)
        cols.append(i)
        vals.append(1.0)
    for i in range(n_coarse):
        rows += [2 * i + 1, 2 * i + 1]
        cols += [i, i + 1]
        vals += [0.5, 0.5]
    return sp.csr_matrix((vals, (rows, cols)), shape=(2 * n_coarse + 1, n_coarse + 1))


def grid_prolongation(coarse: StructuredGrid) -> sp.csr_matrix:
    px = prolongation_1d(coarse.nx)
    py = prolongation_1d(coarse.ny)
    pz = prolongation_1d(coarse.nz)
    return as_csr(sp.kron(pz, sp.kron(py, px)))


@dataclass
class _Level:
    A: sp.csr_matrix
    inv_diag: np.ndarray
    omega: float = 0.6
    P: sp.csr_matrix | None = None  # prolongation from the next coarser level


def _make_level(A: sp.csr_matrix, omega: float) -> _Level:
    return _Level(A, 1.0 / A.diagonal(), omega)


@dataclass
class GmgHierarchy:
    """Galerkin hierarchy with damped-Jacobi smoothing and a dense coarse solve."""

    grids: list[StructuredGrid]
    levels: list[_Level]
    coarse_factor: tuple = field(repr=False, default=None)
    nu_pre: int = 2
    nu_post: int = 2

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def coarse_solve(self, b: np.ndarray) -> np.ndarray:
        kind, fac = self.coarse_factor
        if kind == "cho":
            return sla.cho_solve(fac, b)
        return fac @ b

    def __call__(self, b: np.ndarray) -> np.ndarray:
        return gmg_vcycle(self, b)


def build_gmg(
    grid: StructuredGrid,
    A,
    galerkin: bool = True,
    min_coarse: int = 1,
    omega: float = 0.6,
    nu: int = 2,
) -> GmgHierarchy:
    """Coarsen by 2 per axis while every element count is even and > min_coarse.

    The Jacobi damping 0.6 (rather than the textbook 2/3) keeps the cycle
    contraction uniform on the fiber-anisotropic operators.
    """
    if not galerkin:
        raise ConfigurationError("only Galerkin coarse operators are supported")
    A = as_csr(A)
    if A.shape[0] != grid.n_nodes:
        raise ValueError("operator does not match the grid")
    grids = [grid]
    levels = [_make_level(A, omega)]
    g = grid
    while all(n % 2 == 0 and n // 2 >= min_coarse for n in g.shape):
        coarse = g.coarsen()
        P = grid_prolongation(coarse)
        Ac = as_csr(P.T @ levels[-1].A @ P)
        levels[-1].P = P
        levels.append(_make_level(Ac, omega))
        grids.append(coarse)
        g = coarse
    dense = levels[-1].A.toarray()
    try:
        factor = ("cho", sla.cho_factor(dense))
    except np.linalg.LinAlgError:
        factor = ("pinv", np.linalg.pinv(dense))
    return GmgHierarchy(grids, levels, factor, nu, nu)


def _smooth(level: _Level, x: np.ndarray, b: np.ndarray, sweeps: int) -> np.ndarray:
    w = level.omega * level.inv_diag
    for _ in range(sweeps):
        x = x + w * (b - level.A @ x)
    return x


def gmg_vcycle(h: GmgHierarchy, b: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
    """One V(nu_pre, nu_post) cycle for ``A x = b`` starting from ``x0``."""
    return _vcycle(h, 0, np.asarray(b, dtype=float), x0)


def _vcycle(h: GmgHierarchy, k: int, b: np.ndarray, x0) -> np.ndarray:
    if k == h.n_levels - 1:
        return h.coarse_solve(b)
    level = h.levels[k]
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float, copy=True)
    x = _smooth(level, x, b, h.nu_pre)
    r = b - level.A @ x
    ec = _vcycle(h, k + 1, level.P.T @ r, None)
    x += level.P @ ec
    return _smooth(level, x, b, h.nu_post)


def block_preconditioner(actions: Sequence[Preconditioner], sizes: Sequence[int]) -> Preconditioner:
    """Block-diagonal preconditioner from per-block actions."""
    edges = np.cumsum([0, *sizes])

    def apply(r):
        return np.concatenate([act(r[a:b]) for act, a, b in zip(actions, edges[:-1], edges[1:])])

    return apply
