"""Mixed finite elements for the elasticity eigenproblem.

Subpackages: mesh (simplicial meshes and bisection refinement),
femspace (elements, quadrature, dof maps), assembly (the symmetric
pencil), eigsolver (dense and shift-invert solvers), estimator
(residual indicators), adaptivity (refinement studies), reports and
cli (study reports and the command line front end).
"""

__version__ = "0.1.0"

from . import adaptivity, assembly, eigsolver, estimator, femspace, mesh, reports

__all__ = [
    "adaptivity",
    "assembly",
    "eigsolver",
    "estimator",
    "femspace",
    "mesh",
    "reports",
    "__version__",
]
