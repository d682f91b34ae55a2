"""Nonlinear solvers for implicit Bidomain time steps.

Q1 finite elements on structured boxes, a FitzHugh-Nagumo membrane model, the
step potential with its gradient and Hessian, six nonlinear solvers and a
benchmark harness.
"""
from .bidomain import BidomainProblem, MonodomainProblem
from .grid_fem import ConductivitySet, build_grid, rotated_fibers
from .ionic import FitzHughNagumo
from .nsolve import METHODS, NonlinearSolveSpec, solve
from .sparse_la import LinearSolveSpec
from .timeloop import SimulationConfig, run

__version__ = "0.1.0"

__all__ = [
    "BidomainProblem",
    "MonodomainProblem",
    "ConductivitySet",
    "build_grid",
    "rotated_fibers",
    "FitzHughNagumo",
    "METHODS",
    "NonlinearSolveSpec",
    "solve",
    "LinearSolveSpec",
    "SimulationConfig",
    "run",
]
