"""Interior penalty DG solver for the displacement-pressure elasticity eigenproblem."""
from importlib.resources import files

from .assembly import BlockSystem, assemble_system
from .eigensolver import EigenSolverError, solve_evp
from .estimator import adaptive_loop, effectivity, local_indicators, mark
from .materials import Material, MaterialTable, lame_from, unscale_eigenvalue
from .mesh import Mesh, generate_unit_square, refine
from .spaces import build_space

__all__ = [
    "BlockSystem", "EigenSolverError", "Material", "MaterialTable", "Mesh",
    "adaptive_loop", "assemble_system", "build_space", "config_path", "effectivity",
    "generate_unit_square", "lame_from", "local_indicators", "mark", "refine",
    "solve_evp", "unscale_eigenvalue",
]
__version__ = "0.1.0"


def config_path(name: str):
    """Path of a shipped configuration file, e.g. ``config_path('stabilization_sweep.cfg')``."""
    return files(__package__) / "configs" / name
