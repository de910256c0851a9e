"""Polarizability tensors of small inclusions by the boundary element method.

Modules
-------
mesh, geometry, meshio
    Closed triangulations, benchmark shapes, refinement and file formats.
operators
    Galerkin single layer and adjoint double layer operators.
pst
    Density solves, tensor formulas and analytic references.
adaptive
    ZZ-type estimator, Doerfler marking and refinement loops.
bench, cli
    Benchmark registry, run drivers, reports and the ``pstbench`` command.
"""

import warnings

__version__ = "0.1.0"

# numba probes TBB before falling back to another threading layer; an
# outdated TBB is harmless here, so its warning is not shown to users.
warnings.filterwarnings("ignore", message="The TBB threading layer requires")

from .geometry import GeometrySpec, build_primitive  # noqa: E402
from .mesh import MeshError, SurfaceMesh, local_refine, uniform_refine, validate  # noqa: E402
from .pst import (ContrastParams, PolarizabilityTensor, analytic_ellipsoid,  # noqa: E402
                  analytic_sphere, bi_tensor, lp_tensor, solve_densities, weighted_tensor)
from .adaptive import AdaptiveConfig, adaptive_loop, uniform_loop  # noqa: E402
from .bench import registry, run_case  # noqa: E402

__all__ = [
    "AdaptiveConfig", "ContrastParams", "GeometrySpec", "MeshError", "PolarizabilityTensor",
    "SurfaceMesh", "adaptive_loop", "analytic_ellipsoid", "analytic_sphere", "bi_tensor",
    "build_primitive", "local_refine", "lp_tensor", "registry", "run_case", "solve_densities",
    "uniform_loop", "uniform_refine", "validate", "weighted_tensor",
]
