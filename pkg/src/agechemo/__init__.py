"""Simulation and feedback stabilization of an age-structured chemostat.

The population density f(a, t) is transported in age, killed at rate
mu(a) + D(t), and renewed at the boundary by the birth integral of the
whole profile.  The dilution rate D is not actuated directly; its slew
u = dD/dt is.  This package solves the closed-loop dynamics along
characteristics, provides the feedback laws that stabilize the unique
positive equilibrium, and evaluates the Lyapunov functionals that
certify the convergence rates.

Modules:
  exprfn       arithmetic expressions in the age variable, for configs
  model        grids, age profiles, quadrature, model parameters
  equilibrium  equilibrium dilution solve and kernel contraction search
  transforms   scalar/remainder coordinates and the output decomposition
  controllers  the feedback-law family
  lyapunov     Lyapunov functionals and trajectory decay audits
  analysis     size measures, envelope and constraint audits
  solver       method-of-characteristics closed-loop integrator
  cli          scenario configs, run orchestration, artifact emission
"""

__version__ = "0.1.0"

from .model import AgeFunction, AgeGrid, ModelError, ModelParams, SimState
from .equilibrium import Equilibrium, KernelCert, build_equilibrium, certify_assumption1, solve_lotka_sharpe
from .controllers import VARIANTS, ControllerSpec
from .transforms import DilutionBounds
from .solver import SolverConfig, Trajectory, simulate

__all__ = [
    "AgeFunction",
    "AgeGrid",
    "ControllerSpec",
    "DilutionBounds",
    "Equilibrium",
    "KernelCert",
    "ModelError",
    "ModelParams",
    "SimState",
    "SolverConfig",
    "Trajectory",
    "VARIANTS",
    "build_equilibrium",
    "certify_assumption1",
    "simulate",
    "solve_lotka_sharpe",
    "__version__",
]
