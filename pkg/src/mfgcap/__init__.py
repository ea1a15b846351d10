"""Density-capped first-order mean field games on the torus.

Solver, duality certificates, circle geodesics, and Lagrangian trajectory
sampling for the variational MFG system with a hard bound m <= mbar.
"""

from .grid import GridSpec, ScalarField, MomentumField
from .model import (CouplingSpec, FourierSeries, HamiltonianSpec, ProblemSpec,
                    penalize, validate)

__version__ = "0.1.0"
