"""Discrete Bidomain step problem, its potential, and the monodomain reduction.

One implicit step with frozen gating ``w`` is the minimization of

    Psi(u_i, u_e) = 1/2 (chi Cm / tau) (v - v_prev)^T M (v - v_prev)
                    + 1/2 u_i^T K_i u_i + 1/2 u_e^T K_e u_e
                    + int Theta(v, w) - I_i^T M u_i - I_e^T M u_e,

with ``v = u_i - u_e``. The ionic integral ``int Theta(v_h, w_h)`` is taken
with the same 2x2x2 Gauss rule as the mass matrix, applied to the Q1
interpolants of the nodal ``v`` and ``w``. The residual and Jacobian below are
the exact gradient and Hessian of that discrete Psi: the ionic Jacobian block
is the consistent mass weighted by ``chi dI/dv`` at the Gauss points, which
reduces to ``c M`` when ``dI/dv = c``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError
from .grid_fem import (
    ConductivitySet,
    FiberField,
    StructuredGrid,
    assemble_mass,
    assemble_stiffness,
    quadrature_operator,
)
from .ionic import IonicModel
from .sparse_la import (
    as_csr,
    block_preconditioner,
    build_gmg,
    jacobi_preconditioner,
    mean_projector,
)

__all__ = ["BidomainProblem", "MonodomainProblem", "StateBox", "split", "join"]

# S/cm -> mS/cm: with Cm in uF/cm^2, t in ms and currents in uA/cm^3 the
# conductivities from the literature enter the stiffness scaled by 1e3.
STIFFNESS_SCALE = 1.0e3


@dataclass(frozen=True)
class StateBox:
    v_lo: float = -0.5
    v_hi: float = 1.5
    w_lo: float = -0.5
    w_hi: float = 1.5


def split(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = x.shape[0] // 2
    return x[:n], x[n:]


def join(u_i: np.ndarray, u_e: np.ndarray) -> np.ndarray:
    return np.concatenate([u_i, u_e])


def _check_positive(**kw):
    for name, val in kw.items():
        if not np.isfinite(val) or val <= 0:
            raise ConfigurationError(f"{name} must be positive, got {val!r}")


def _gmg_action(grid, A):
    return build_gmg(grid, A)


class IonicQuadrature:
    """Ionic terms integrated at the Gauss points of every element."""

    def __init__(self, grid: StructuredGrid, model: IonicModel, chi: float):
        self.Q, self.W = quadrature_operator(grid)
        self.model = model
        self.chi = chi
        self.w_q = None

    def set_gating(self, w: np.ndarray):
        w = np.asarray(w, dtype=float)
        self.w_q = self.Q @ w if w.ndim == 1 else (self.Q @ w.T).T

    def potential(self, v: np.ndarray) -> float:
        return float(self.W @ self.model.theta(self.Q @ v, self.w_q, chi=self.chi))

    def gradient(self, v: np.ndarray) -> np.ndarray:
        return self.Q.T @ (self.chi * self.W * self.model.i_ion(self.Q @ v, self.w_q))

    def hessian(self, v: np.ndarray) -> sp.csr_matrix:
        d = self.chi * self.W * self.model.d_i_ion_dv(self.Q @ v, self.w_q)
        return as_csr(self.Q.T @ sp.diags(d) @ self.Q)


@dataclass
class BidomainProblem:
    grid: StructuredGrid
    fibers: FiberField
    conductivities: ConductivitySet
    model: IonicModel
    chi: float = 1000.0
    cm: float = 1.0
    tau: float = 0.05
    gauge: bool = True
    stiffness_scale: float = STIFFNESS_SCALE
    state_box: StateBox = field(default_factory=StateBox)

    def __post_init__(self):
        _check_positive(chi=self.chi, cm=self.cm, tau=self.tau)
        g = self.grid
        self.M = assemble_mass(g)
        self.K_i = self.stiffness_scale * assemble_stiffness(
            g, self.fibers, self.conductivities.per_element(g, "i")
        )
        self.K_e = self.stiffness_scale * assemble_stiffness(
            g, self.fibers, self.conductivities.per_element(g, "e")
        )
        self.ionic = IonicQuadrature(g, self.model, self.chi)
        n = g.n_nodes
        self.v_prev = np.zeros(n)
        self.w_now = self.model.initial_gating(self.v_prev)
        self.ionic.set_gating(self.w_now)
        self.iapp_i = np.zeros(n)
        self.iapp_e = np.zeros(n)
        self.linear_projector = mean_projector(n, 2 * n) if self.gauge else None

    @property
    def n_nodes(self) -> int:
        return self.grid.n_nodes

    @property
    def size(self) -> int:
        return 2 * self.grid.n_nodes

    @property
    def capacitive(self) -> float:
        """chi Cm / tau."""
        return self.chi * self.cm / self.tau

    def set_step(self, v_prev, w_now, iapp_i=None, iapp_e=None, tau: float | None = None):
        n = self.n_nodes
        if tau is not None:
            _check_positive(tau=tau)
            self.tau = float(tau)
        self.v_prev = np.asarray(v_prev, dtype=float).reshape(n)
        self.w_now = np.asarray(w_now, dtype=float)
        self.ionic.set_gating(self.w_now)
        self.iapp_i = np.zeros(n) if iapp_i is None else np.asarray(iapp_i, dtype=float)
        self.iapp_e = np.zeros(n) if iapp_e is None else np.asarray(iapp_e, dtype=float)
        self.check_compatibility()

    def check_compatibility(self):
        Mi = self.M @ self.iapp_i
        Me = self.M @ self.iapp_e
        scale = np.linalg.norm(np.concatenate([Mi, Me]))
        if abs(Mi.sum() + Me.sum()) > 1e-10 * scale:
            raise ConfigurationError(
                "applied currents violate compatibility: int (I_i + I_e) = "
                f"{Mi.sum() + Me.sum():.3e}"
            )

    # ----------------------------------------------------------------- Psi
    def potential(self, x: np.ndarray) -> float:
        u_i, u_e = split(x)
        v = u_i - u_e
        dv = v - self.v_prev
        val = 0.5 * self.capacitive * dv @ (self.M @ dv)
        val += 0.5 * u_i @ (self.K_i @ u_i) + 0.5 * u_e @ (self.K_e @ u_e)
        val += self.ionic.potential(v)
        val -= self.iapp_i @ (self.M @ u_i) + self.iapp_e @ (self.M @ u_e)
        return float(val)

    def residual(self, x: np.ndarray, project: bool | None = None) -> np.ndarray:
        """Gradient of Psi; the u_e block is mean-projected when the gauge is on."""
        u_i, u_e = split(x)
        v = u_i - u_e
        common = self.capacitive * (self.M @ (v - self.v_prev))
        common += self.ionic.gradient(v)
        f_i = common + self.K_i @ u_i - self.M @ self.iapp_i
        f_e = -common + self.K_e @ u_e - self.M @ self.iapp_e
        if self.gauge if project is None else project:
            f_e = f_e - f_e.mean()
        return join(f_i, f_e)

    def jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        """Hessian of Psi as a symmetric 2N x 2N CSR matrix."""
        u_i, u_e = split(x)
        v = u_i - u_e
        C = self.capacitive * self.M + self.ionic.hessian(v)
        J = sp.bmat([[C + self.K_i, -C], [-C, C + self.K_e]], format="csr")
        return as_csr(J)

    def project(self, x: np.ndarray) -> np.ndarray:
        """Gauge: shift both potentials so that mean(u_e) = 0 (v unchanged)."""
        if not self.gauge:
            return x
        n = self.n_nodes
        c = x[n:].mean()
        return x - c

    def preconditioner(self, J, kind: str = "gmg"):
        """Preconditioner action for the monolithic 2N system.

        ``gmg`` works in the variables ``(v, u_e)`` with ``u_i = v + u_e``:
        with ``T = [[I, I], [0, I]]`` the transformed Jacobian ``T^T J T`` has
        diagonal blocks ``C + K_i`` and ``K_i + K_e``, each approximated by one
        V-cycle, and ``B = T diag(G_1, G_2) T^T``. Unlike a plain block-diagonal
        surrogate this stays uniform in ``chi Cm / tau`` and ``h``.
        ``gmg_block`` is that plain surrogate: V-cycles on ``J_ii`` and ``J_ee``.
        """
        n = self.n_nodes
        if kind == "none":
            return lambda r: r
        if kind == "jacobi":
            return jacobi_preconditioner(J)
        J = sp.csr_matrix(J)
        if kind == "gmg_block":
            h_i = _gmg_action(self.grid, J[:n, :n])
            h_e = _gmg_action(self.grid, J[n:, n:])
            return block_preconditioner([h_i, h_e], [n, n])
        if kind != "gmg":
            raise ConfigurationError(f"unknown preconditioner {kind!r}")
        g_v = _gmg_action(self.grid, J[:n, :n])
        g_e = _gmg_action(self.grid, self.K_i + self.K_e)

        def apply(r):
            r_i, r_e = r[:n], r[n:]
            s = r_i + r_e
            z_e = g_e(s - s.mean())
            z_e -= z_e.mean()
            z_v = g_v(r_i)
            return join(z_v + z_e, z_e)

        return apply

    # ------------------------------------------------------------- bounds
    def derivative_bounds(self) -> tuple[float, float]:
        b = self.state_box
        return self.model.derivative_bounds(b.v_lo, b.v_hi, b.w_lo, b.w_hi)

    def convexity_timestep_bound(self) -> float:
        """Largest tau keeping Psi convex: chi Cm / |chi I_lo| (inf if I_lo >= 0).

        The ionic contribution to the Hessian is ``chi dI/dv``, so the bound
        compares chi Cm / tau against chi |I_lo|; for chi = 1 this is the
        familiar ``chi Cm / |I_lo|``.
        """
        lo, _ = self.derivative_bounds()
        if lo >= 0:
            return float("inf")
        return self.chi * self.cm / (self.chi * abs(lo))

    def transmembrane(self, x: np.ndarray) -> np.ndarray:
        u_i, u_e = split(x)
        return u_i - u_e


@dataclass
class MonodomainProblem:
    """Single-field reduction with harmonic-mean conductivities.

    ``mode='implicit'`` evaluates I_ion at the unknown v; ``'explicit'`` (IMEX)
    evaluates it at ``v_prev`` so each step is a linear SPD solve.
    """

    grid: StructuredGrid
    fibers: FiberField
    conductivities: ConductivitySet
    model: IonicModel
    chi: float = 1000.0
    cm: float = 1.0
    tau: float = 0.05
    mode: str = "implicit"
    stiffness_scale: float = STIFFNESS_SCALE

    def __post_init__(self):
        _check_positive(chi=self.chi, cm=self.cm, tau=self.tau)
        if self.mode not in ("implicit", "explicit"):
            raise ConfigurationError(f"unknown nonlinearity mode {self.mode!r}")
        g = self.grid
        self.M = assemble_mass(g)
        sig = self._harmonic_per_element()
        self.K = self.stiffness_scale * assemble_stiffness(g, self.fibers, sig)
        self.ionic = IonicQuadrature(g, self.model, self.chi)
        n = g.n_nodes
        self.v_prev = np.zeros(n)
        self.w_now = self.model.initial_gating(self.v_prev)
        self.ionic.set_gating(self.w_now)
        self.iapp = np.zeros(n)
        self.linear_projector = None

    def _harmonic_per_element(self):
        si = self.conductivities.per_element(self.grid, "i")
        se = self.conductivities.per_element(self.grid, "e")
        tot = si + se
        return np.divide(si * se, tot, out=np.zeros_like(tot), where=tot > 0)

    @property
    def size(self) -> int:
        return self.grid.n_nodes

    @property
    def capacitive(self) -> float:
        return self.chi * self.cm / self.tau

    def set_step(self, v_prev, w_now, iapp=None, tau: float | None = None):
        if tau is not None:
            _check_positive(tau=tau)
            self.tau = float(tau)
        self.v_prev = np.asarray(v_prev, dtype=float)
        self.w_now = np.asarray(w_now, dtype=float)
        self.ionic.set_gating(self.w_now)
        self.iapp = np.zeros(self.size) if iapp is None else np.asarray(iapp, dtype=float)

    def _ionic_point(self, v):
        return v if self.mode == "implicit" else self.v_prev

    def residual(self, v: np.ndarray) -> np.ndarray:
        vi = self._ionic_point(v)
        r = self.capacitive * (self.M @ (v - self.v_prev)) + self.K @ v
        r += self.ionic.gradient(vi)
        return r - self.M @ self.iapp

    def jacobian(self, v: np.ndarray) -> sp.csr_matrix:
        J = self.capacitive * self.M + self.K
        if self.mode == "implicit":
            J = J + self.ionic.hessian(v)
        return as_csr(J)

    def potential(self, v: np.ndarray) -> float:
        """Single-field analogue of Psi (implicit mode)."""
        dv = v - self.v_prev
        val = 0.5 * self.capacitive * dv @ (self.M @ dv) + 0.5 * v @ (self.K @ v)
        val += self.ionic.potential(v)
        return float(val - self.iapp @ (self.M @ v))

    def project(self, v):
        return v

    def preconditioner(self, J, kind: str = "gmg"):
        if kind == "none":
            return lambda r: r
        if kind == "jacobi":
            return jacobi_preconditioner(J)
        return build_gmg(self.grid, J)
