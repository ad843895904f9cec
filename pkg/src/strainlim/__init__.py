"""Mixed finite elements and a decoupled iteration for strain-limiting elasticity."""

from .material import MaterialLaw, RegularizationParams, builtin_law, constant_law
from .mesh import Mesh, checkerboard_partition, crack_mesh, refine, uniform_square_mesh
from .tensor import SymTensor

__all__ = [
    "MaterialLaw",
    "Mesh",
    "RegularizationParams",
    "SymTensor",
    "builtin_law",
    "checkerboard_partition",
    "constant_law",
    "crack_mesh",
    "refine",
    "uniform_square_mesh",
]
