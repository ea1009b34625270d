"""Numerical verification of multipolar Hardy inequalities on Finsler manifolds."""
from .calculus import TestFunction, differential, divergence, finsler_gradient, finsler_laplacian, \
    make_test_function
from .config import ConfigError, RunConfig
from .constants import ConstantsEstimate, degeneracy_sweep, estimate_constants
from .distance import DistanceField, PoleSet, solve_distance
from .grid import Field, GridDomain
from .hardy import InequalityReport
from .io import export_field, import_field
from .measure import integrate, volume_density, volume_density_field
from .structures import FinslerStructure, eval_F, fundamental_tensor, legendre_transform, polar_transform

__version__ = "0.1.0"
