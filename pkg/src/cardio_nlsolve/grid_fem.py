"""Structured Q1 hexahedral meshes, fiber fields and FEM assembly.

Nodes are numbered lexicographically with x fastest::

    node(i, j, k) = i + (nx + 1) * (j + (ny + 1) * k)

and the eight local nodes of an element follow the same rule
(``l = dx + 2 dy + 4 dz``).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError

__all__ = [
    "StructuredGrid",
    "FiberField",
    "ConductivitySet",
    "Box",
    "build_grid",
    "rotated_fibers",
    "assemble_mass",
    "assemble_stiffness",
    "lumped_mass",
    "quadrature_operator",
]

# 2-point Gauss rule on [0, 1]
_GAUSS_X = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
_GAUSS_W = np.array([0.5, 0.5])
_LOCAL_OFFSETS = np.array([[dx, dy, dz] for dz in (0, 1) for dy in (0, 1) for dx in (0, 1)])


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``[lo, hi]`` in physical coordinates (cm)."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def contains(self, points: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return np.all((points >= lo) & (points <= hi), axis=-1)


@dataclass(frozen=True)
class StructuredGrid:
    nx: int
    ny: int
    nz: int
    hx: float
    hy: float
    hz: float

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def node_shape(self) -> tuple[int, int, int]:
        return (self.nx + 1, self.ny + 1, self.nz + 1)

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1) * (self.nz + 1)

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def lengths(self) -> tuple[float, float, float]:
        return (self.nx * self.hx, self.ny * self.hy, self.nz * self.hz)

    @property
    def volume(self) -> float:
        lx, ly, lz = self.lengths
        return lx * ly * lz

    def node_index(self, i, j, k):
        return np.asarray(i) + (self.nx + 1) * (np.asarray(j) + (self.ny + 1) * np.asarray(k))

    def node_ijk(self, index):
        index = np.asarray(index)
        i = index % (self.nx + 1)
        rest = index // (self.nx + 1)
        return i, rest % (self.ny + 1), rest // (self.ny + 1)

    @cached_property
    def coordinates(self) -> np.ndarray:
        """(N, 3) array of node coordinates."""
        i, j, k = self.node_ijk(np.arange(self.n_nodes))
        return np.stack([i * self.hx, j * self.hy, k * self.hz], axis=1)

    @cached_property
    def connectivity(self) -> np.ndarray:
        """(n_elements, 8) global node ids per element, elements x-fastest."""
        ei, ej, ek = np.meshgrid(
            np.arange(self.nx), np.arange(self.ny), np.arange(self.nz), indexing="ij"
        )
        # flatten with x fastest
        ei, ej, ek = (a.transpose(2, 1, 0).ravel() for a in (ei, ej, ek))
        cols = [self.node_index(ei + dx, ej + dy, ek + dz) for dx, dy, dz in _LOCAL_OFFSETS]
        return np.stack(cols, axis=1)

    @cached_property
    def element_centers(self) -> np.ndarray:
        return self.coordinates[self.connectivity].mean(axis=1)

    def coarsen(self) -> "StructuredGrid":
        if self.nx % 2 or self.ny % 2 or self.nz % 2:
            raise ConfigurationError(f"grid {self.shape} is not coarsenable by 2")
        return StructuredGrid(
            self.nx // 2, self.ny // 2, self.nz // 2, 2 * self.hx, 2 * self.hy, 2 * self.hz
        )


def build_grid(nx: int, ny: int, nz: int, hx: float, hy: float, hz: float) -> StructuredGrid:
    for name, val in (("nx", nx), ("ny", ny), ("nz", nz)):
        if int(val) != val or val < 1:
            raise ConfigurationError(f"{name} must be a positive integer, got {val!r}")
    for name, val in (("hx", hx), ("hy", hy), ("hz", hz)):
        if not np.isfinite(val) or val <= 0:
            raise ConfigurationError(f"{name} must be positive, got {val!r}")
    return StructuredGrid(int(nx), int(ny), int(nz), float(hx), float(hy), float(hz))


@dataclass(frozen=True)
class FiberField:
    """Per-element orthonormal frames; arrays have shape (n_elements, 3)."""

    a_l: np.ndarray
    a_t: np.ndarray
    a_n: np.ndarray
    angles: np.ndarray | None = None


def rotated_fibers(grid: StructuredGrid, angle_endo: float, angle_epi: float) -> FiberField:
    """Transmural fiber rotation: angle linear in z between the z=0 and z=Lz faces."""
    lz = grid.lengths[2]
    zc = grid.element_centers[:, 2]
    theta = angle_endo + (angle_epi - angle_endo) * zc / lz
    c, s = np.cos(theta), np.sin(theta)
    zeros = np.zeros_like(theta)
    a_l = np.stack([c, s, zeros], axis=1)
    a_t = np.tile([0.0, 0.0, 1.0], (theta.size, 1))
    a_n = np.cross(a_l, a_t)
    return FiberField(a_l, a_t, a_n, theta)


@dataclass(frozen=True)
class ConductivitySet:
    """Intra-/extracellular conductivities along (l, t, n), in S/cm.

    ``sigma_n_*`` default to the transverse value. Inside ``ischemic_box`` the
    coefficients are replaced by ``ischemic_scale`` times the healthy ones
    unless explicit ischemic coefficients are given.
    """

    sigma_l_i: float = 3.0e-3
    sigma_t_i: float = 3.1525e-4
    sigma_l_e: float = 2.0e-3
    sigma_t_e: float = 1.3514e-3
    sigma_n_i: float | None = None
    sigma_n_e: float | None = None
    ischemic_box: Box | None = None
    ischemic_scale: float = 0.5
    ischemic: tuple[float, ...] | None = field(default=None)

    def __post_init__(self):
        vals = self.intra + self.extra
        if any((not np.isfinite(v)) or v < 0 for v in vals):
            raise ConfigurationError(f"conductivities must be non-negative, got {vals}")
        if self.ischemic is not None and len(self.ischemic) != 6:
            raise ConfigurationError("ischemic coefficients must be six values")

    @property
    def intra(self) -> tuple[float, float, float]:
        n = self.sigma_t_i if self.sigma_n_i is None else self.sigma_n_i
        return (self.sigma_l_i, self.sigma_t_i, n)

    @property
    def extra(self) -> tuple[float, float, float]:
        n = self.sigma_t_e if self.sigma_n_e is None else self.sigma_n_e
        return (self.sigma_l_e, self.sigma_t_e, n)

    @property
    def ischemic_coefficients(self) -> tuple[float, ...]:
        if self.ischemic is not None:
            return tuple(self.ischemic)
        return tuple(self.ischemic_scale * s for s in self.intra + self.extra)

    def healthy(self) -> "ConductivitySet":
        return replace(self, ischemic_box=None)

    def harmonic_mean(self) -> tuple[float, float, float]:
        """Monodomain conductivities sigma_i sigma_e / (sigma_i + sigma_e)."""
        out = []
        for si, se in zip(self.intra, self.extra):
            out.append(si * se / (si + se) if si + se > 0 else 0.0)
        return tuple(out)

    def per_element(self, grid: StructuredGrid, which: str) -> np.ndarray:
        """(n_elements, 3) coefficients for ``which`` in {'i', 'e'}."""
        base = np.array(self.intra if which == "i" else self.extra)
        sig = np.tile(base, (grid.n_elements, 1))
        if self.ischemic_box is not None:
            isch = np.array(self.ischemic_coefficients)
            isch = isch[:3] if which == "i" else isch[3:]
            inside = self.ischemic_box.contains(grid.element_centers)
            sig[inside] = isch
        return sig


def _shape_1d(x):
    return np.array([1.0 - x, x]), np.array([-1.0, 1.0])


def _reference_element():
    """Q1 shape values and reference gradients at the 8 Gauss points.

    Returns ``phi`` (8q, 8n), ``dphi`` (8q, 8n, 3) on the unit cube and
    weights ``w`` (8q,).
    """
    pts = [(a, b, c) for c in range(2) for b in range(2) for a in range(2)]
    phi = np.empty((8, 8))
    dphi = np.empty((8, 8, 3))
    w = np.empty(8)
    for q, (a, b, c) in enumerate(pts):
        x, y, z = _GAUSS_X[a], _GAUSS_X[b], _GAUSS_X[c]
        w[q] = _GAUSS_W[a] * _GAUSS_W[b] * _GAUSS_W[c]
        (nx_, dx_), (ny_, dy_), (nz_, dz_) = _shape_1d(x), _shape_1d(y), _shape_1d(z)
        for n, (i, j, k) in enumerate(_LOCAL_OFFSETS):
            phi[q, n] = nx_[i] * ny_[j] * nz_[k]
            dphi[q, n] = (dx_[i] * ny_[j] * nz_[k], nx_[i] * dy_[j] * nz_[k], nx_[i] * ny_[j] * dz_[k])
    return phi, dphi, w


_PHI, _DPHI, _W = _reference_element()


def _scatter(grid: StructuredGrid, local: np.ndarray) -> sp.csr_matrix:
    """Assemble (n_elements, 8, 8) or (8, 8) local matrices into canonical CSR."""
    conn = grid.connectivity
    if local.ndim == 2:
        local = np.broadcast_to(local, (conn.shape[0], 8, 8))
    rows = np.repeat(conn, 8, axis=1).ravel()
    cols = np.tile(conn, (1, 8)).ravel()
    n = grid.n_nodes
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def element_mass(grid: StructuredGrid) -> np.ndarray:
    vol = grid.hx * grid.hy * grid.hz
    return vol * np.einsum("q,qa,qb->ab", _W, _PHI, _PHI)


def assemble_mass(grid: StructuredGrid) -> sp.csr_matrix:
    """Consistent Q1 mass matrix."""
    return _scatter(grid, element_mass(grid))


def lumped_mass(grid: StructuredGrid) -> np.ndarray:
    """Row sums of the consistent mass matrix (nodal volumes)."""
    return np.asarray(assemble_mass(grid).sum(axis=1)).ravel()


def quadrature_operator(grid: StructuredGrid) -> tuple[sp.csr_matrix, np.ndarray]:
    """Interpolation to the 2x2x2 Gauss points of every element.

    Returns ``Q`` of shape (8 n_elements, n_nodes) with ``(Q u)[8e + q]`` the
    value of the Q1 interpolant at point q of element e, and the matching
    physical weights (summing to the domain volume). ``Q^T diag(W) Q`` is the
    consistent mass matrix.
    """
    conn = grid.connectivity
    n_el = conn.shape[0]
    rows = np.repeat(np.arange(8 * n_el), 8)
    cols = np.repeat(conn, 8, axis=0).ravel()
    vals = np.tile(_PHI.ravel(), n_el)
    Q = sp.csr_matrix((vals, (rows, cols)), shape=(8 * n_el, grid.n_nodes))
    Q.sum_duplicates()
    Q.sort_indices()
    weights = np.tile(_W, n_el) * (grid.hx * grid.hy * grid.hz)
    return Q, weights


def conductivity_tensors(fibers: FiberField, sigma: np.ndarray) -> np.ndarray:
    """D = sum_* sigma_* a_* a_*^T per element, shape (n_elements, 3, 3)."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim == 1:
        sigma = np.broadcast_to(sigma, (fibers.a_l.shape[0], 3))
    D = np.zeros((fibers.a_l.shape[0], 3, 3))
    for col, a in enumerate((fibers.a_l, fibers.a_t, fibers.a_n)):
        D += sigma[:, col, None, None] * np.einsum("ei,ej->eij", a, a)
    return D


def assemble_stiffness(grid: StructuredGrid, fibers: FiberField, sigma) -> sp.csr_matrix:
    """Anisotropic Q1 stiffness ``int (D grad phi_a) . grad phi_b``.

    ``sigma`` is either three coefficients (l, t, n) or an (n_elements, 3)
    array of per-element coefficients.
    """
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0) or not np.all(np.isfinite(sigma)):
        raise ConfigurationError("conductivity coefficients must be finite and non-negative")
    if sigma.ndim == 1 and sigma.size != 3:
        raise ConfigurationError("expected three conductivity coefficients (l, t, n)")
    D = conductivity_tensors(fibers, sigma)
    h = np.array([grid.hx, grid.hy, grid.hz])
    vol = float(np.prod(h))
    grads = _DPHI / h  # physical gradients, element-independent on a uniform grid
    # G[a, b, j, k] = int d_a phi_j d_b phi_k
    G = vol * np.einsum("q,qja,qkb->abjk", _W, grads, grads)
    local = np.einsum("eab,abjk->ejk", D, G)
    return _scatter(grid, local)
