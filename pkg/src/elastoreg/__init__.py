"""2D P1 finite elements for p-Laplace-regularised nonlinear elastodynamics."""
from .constitutive import MaterialModel
from .diagnostics import RunRecord, energy_estimate_check, korn_ratio, lifespan_run, min_determinant
from .elastodyn import ElastoState, SolverConfig, elasto_step, kappa_continuation, simulate
from .fem import BoundaryField, NodalField, QuadTensorField
from .mesh import Mesh2D, build_rectangle_mesh, load_mesh, save_mesh
from .plaplace import PLaplaceProblem, pl_solve, pl_step

__version__ = "0.1.0"

__all__ = [
    "BoundaryField", "ElastoState", "MaterialModel", "Mesh2D", "NodalField", "PLaplaceProblem",
    "QuadTensorField", "RunRecord", "SolverConfig", "build_rectangle_mesh", "elasto_step",
    "energy_estimate_check", "kappa_continuation", "korn_ratio", "lifespan_run", "load_mesh",
    "min_determinant", "pl_solve", "pl_step", "save_mesh", "simulate",
]
