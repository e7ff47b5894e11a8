"""Weak Galerkin finite elements for -div(a(u) grad u) = f on polygonal meshes."""

from .analysis import ErrorRecord, energy_error, energy_norm, fit_rate, h1_like_error, l2_error
from .mesh import Mesh, MeshError, build_perturbed_quad, build_rectangular, export_mesh, import_mesh
from .problems import ProblemSpec, builtin_problem, load_problem, validate_problem
from .system import NewtonConfig, SolveReport, newton_solve
from .twogrid import GridPair, coarse_eval, locate_point, two_grid_solve
from .wgcore import DofMap, ElementOperators, WGFunction, project_Qh

__version__ = "0.1.0"

__all__ = [
    "ErrorRecord",
    "energy_error",
    "energy_norm",
    "fit_rate",
    "h1_like_error",
    "l2_error",
    "Mesh",
    "MeshError",
    "build_perturbed_quad",
    "build_rectangular",
    "export_mesh",
    "import_mesh",
    "ProblemSpec",
    "builtin_problem",
    "load_problem",
    "validate_problem",
    "NewtonConfig",
    "SolveReport",
    "newton_solve",
    "GridPair",
    "coarse_eval",
    "locate_point",
    "two_grid_solve",
    "DofMap",
    "ElementOperators",
    "WGFunction",
    "project_Qh",
]
