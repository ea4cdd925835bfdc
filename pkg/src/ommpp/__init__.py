"""Orbital minimization with kinetic and pole-expansion preconditioners on periodic 2D grids."""

from .dense import SpectralData, dense_eig, projector, resolve_occupation, subspace_distance
from .grid import HamiltonianOp, PotentialSpec, SpectralGrid, build_grid, densify, sample_potential
from .omm import OmmConfig, OmmReport, energy, gradient, negative_definite_shift, pcg_minimize
from .poles import (
    DenseResolventSolver,
    GmresResolventSolver,
    PoleSet,
    ProjectionPrecond,
    SpectralWindow,
    build_poles,
    indicator_error,
    randomized_projection,
)
from .precond import KineticFilter, compute_tau
from .sparsify import GmresConfig, build_sparsified, gmres

__version__ = "0.1.0"
