"""Ionic membrane models.

An :class:`IonicModel` supplies the current ``I_ion(v, w)``, its derivative in
``v``, the primitive ``Theta(v, w) = int_{v_ref}^v chi I_ion(xi, w) dxi`` and
the gating right-hand side ``R(v, w)`` with ``dw/dt = R``. Gating arrays have
shape ``(N,)`` for a single gate or ``(N_W, N)`` in general.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .errors import StepFailure

__all__ = ["IonicModel", "FitzHughNagumo", "LinearIonic", "NoIonic"]


class IonicModel(ABC):
    gating_count: int = 1
    concentration_count: int = 0
    v_ref: float = 0.0

    @abstractmethod
    def i_ion(self, v, w):
        ...

    @abstractmethod
    def d_i_ion_dv(self, v, w):
        ...

    @abstractmethod
    def gating_rhs(self, v, w):
        ...

    def d_gating_rhs_dw(self, v, w):
        """Derivative of R in w (per gate); finite differences unless overridden."""
        h = 1e-7 * (1.0 + np.abs(w))
        return (self.gating_rhs(v, w + h) - self.gating_rhs(v, w - h)) / (2 * h)

    def theta(self, v, w, chi: float = 1.0):
        """Primitive in v anchored at ``v_ref``; 16-point Gauss-Legendre by default."""
        v = np.asarray(v, dtype=float)
        x, wq = np.polynomial.legendre.leggauss(16)
        half = 0.5 * (v - self.v_ref)
        mid = 0.5 * (v + self.v_ref)
        total = np.zeros(np.broadcast(v, np.asarray(w)).shape)
        for xi, wi in zip(x, wq):
            total = total + wi * self.i_ion(mid + half * xi, w)
        return chi * half * total

    def derivative_bounds(self, v_lo, v_hi, w_lo, w_hi, samples: int = 1024):
        """Approximate (min, max) of dI/dv on a ``samples``-point grid per axis."""
        vs = np.linspace(v_lo, v_hi, samples)
        ws = np.linspace(w_lo, w_hi, samples)
        V, W = np.meshgrid(vs, ws, indexing="ij")
        d = self.d_i_ion_dv(V, W)
        return float(d.min()), float(d.max())

    def initial_gating(self, v):
        """Resting gating state for potential v (fixed point of R)."""
        return np.zeros_like(np.asarray(v, dtype=float))

    def gating_step(self, v_prev, w_prev, tau: float, tol: float = 1e-12, max_it: int = 50):
        """Backward Euler ``w = w_prev + tau R(v_prev, w)`` by nodewise scalar Newton."""
        if tau <= 0:
            raise ValueError("tau must be positive")
        w = np.array(w_prev, dtype=float, copy=True)
        w_prev = np.asarray(w_prev, dtype=float)
        for _ in range(max_it):
            g = w - w_prev - tau * self.gating_rhs(v_prev, w)
            if np.all(np.abs(g) <= tol * (1.0 + np.abs(w))):
                return w
            dg = 1.0 - tau * self.d_gating_rhs_dw(v_prev, w)
            w = w - g / dg
        g = w - w_prev - tau * self.gating_rhs(v_prev, w)
        bad = np.abs(g) > tol * (1.0 + np.abs(w))
        node = int(np.flatnonzero(np.ravel(bad))[0])
        raise StepFailure(f"gating Newton did not converge at node {node}", node=node)


@dataclass
class FitzHughNagumo(IonicModel):
    """Cubic FitzHugh-Nagumo: I = k v (v - a)(v - 1) + w, R = eps (gamma v - w)."""

    k: float = 8.0
    a: float = 0.1
    eps: float = 0.01
    gamma: float = 0.5
    v_ref: float = 0.0

    gating_count = 1
    concentration_count = 0

    def i_ion(self, v, w):
        v = np.asarray(v, dtype=float)
        return self.k * v * (v - self.a) * (v - 1.0) + w

    def d_i_ion_dv(self, v, w=None):
        v = np.asarray(v, dtype=float)
        return self.k * (3.0 * v * v - 2.0 * (self.a + 1.0) * v + self.a)

    def _poly(self, v):
        a = self.a
        return self.k * (v**4 / 4.0 - (a + 1.0) * v**3 / 3.0 + a * v**2 / 2.0)

    def theta(self, v, w, chi: float = 1.0):
        v = np.asarray(v, dtype=float)
        w = np.asarray(w, dtype=float)
        return chi * (self._poly(v) + w * v - self._poly(self.v_ref) - w * self.v_ref)

    def gating_rhs(self, v, w):
        return self.eps * (self.gamma * np.asarray(v) - np.asarray(w))

    def d_gating_rhs_dw(self, v, w):
        return -self.eps * np.ones_like(np.asarray(w, dtype=float))

    def gating_step(self, v_prev, w_prev, tau: float, tol: float = 1e-12, max_it: int = 50):
        if tau <= 0:
            raise ValueError("tau must be positive")
        te = tau * self.eps
        return (np.asarray(w_prev, dtype=float) + te * self.gamma * np.asarray(v_prev)) / (1.0 + te)

    def initial_gating(self, v):
        return self.gamma * np.asarray(v, dtype=float)

    @property
    def derivative_minimizer(self) -> float:
        return (self.a + 1.0) / 3.0

    def derivative_bounds(self, v_lo, v_hi, w_lo=None, w_hi=None, samples=None):
        """Exact extrema of the quadratic dI/dv over [v_lo, v_hi] (w-independent)."""
        if v_lo > v_hi:
            raise ValueError("empty interval")
        cands = [v_lo, v_hi]
        vstar = self.derivative_minimizer
        if v_lo <= vstar <= v_hi:
            cands.append(vstar)
        d = self.d_i_ion_dv(np.array(cands))
        return float(d.min()), float(d.max())

    def lipschitz_dv(self, v_max: float) -> float:
        """Lipschitz constant of dI/dv on |v| <= v_max."""
        return abs(self.k) * (6.0 * v_max + 2.0 * (self.a + 1.0))


@dataclass
class LinearIonic(IonicModel):
    """I = c v + w with frozen gating; a linear test model."""

    c: float = 1.0
    v_ref: float = 0.0
    gating_count = 1

    def i_ion(self, v, w):
        return self.c * np.asarray(v, dtype=float) + np.asarray(w, dtype=float)

    def d_i_ion_dv(self, v, w=None):
        return self.c * np.ones_like(np.asarray(v, dtype=float))

    def theta(self, v, w, chi: float = 1.0):
        v = np.asarray(v, dtype=float)
        w = np.asarray(w, dtype=float)
        r = self.v_ref
        return chi * (0.5 * self.c * (v * v - r * r) + w * (v - r))

    def gating_rhs(self, v, w):
        return np.zeros_like(np.asarray(w, dtype=float))

    def derivative_bounds(self, v_lo, v_hi, w_lo=None, w_hi=None, samples=None):
        return float(self.c), float(self.c)


class NoIonic(LinearIonic):
    """I_ion identically zero."""

    def __init__(self):
        super().__init__(c=0.0)

    def i_ion(self, v, w):
        return np.zeros(np.broadcast(np.asarray(v), np.asarray(w)).shape)

    def theta(self, v, w, chi: float = 1.0):
        return np.zeros(np.broadcast(np.asarray(v), np.asarray(w)).shape)
