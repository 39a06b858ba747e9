"""Isogeometric multi-patch Poisson solver with dG interfaces and IETI-DP."""

__version__ = "0.1.0"

from .bspline import KnotVector, TensorSplineSpace, make_knot_vector, make_space
from .ietidp import IetiDPSolver, SolveReport, solve, solve_pcg
from .multipatch import (
    MultiPatch,
    build_ring,
    build_square_tgrid,
    mini_ring,
    staggered_ring,
    thin_ring,
)

__all__ = [
    "IetiDPSolver",
    "KnotVector",
    "MultiPatch",
    "SolveReport",
    "TensorSplineSpace",
    "build_ring",
    "build_square_tgrid",
    "make_knot_vector",
    "make_space",
    "mini_ring",
    "staggered_ring",
    "solve",
    "solve_pcg",
    "thin_ring",
]
