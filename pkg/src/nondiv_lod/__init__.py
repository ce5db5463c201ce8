"""Localized orthogonal decomposition for nondivergence-form problems A:D^2u = f."""
from .coeffs import CoefficientField, CordesReport, builtin_field, builtin_rhs, cordes_analyze
from .lod import compute_basis, corrector, default_ell, solve_lod
from .mesh import Mesh2D, patch, refine, uniform_mesh
from .mixed_fem import MixedSystem, assemble, error_norms, solve_fine
from .qoi import QoiSet, build_qois

__version__ = "0.1.0"
