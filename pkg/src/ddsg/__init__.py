"""Dimension-wise decomposed sparse grids (DDSG) and a time-iteration solver for IRBC models."""

from . import ddsg_eval, hdmr, irbc, runtime, solver, sparse_grid
from ._kernels import backend_name
from .hdmr import AnchorPoint, DdsgFunction, decompose
from .sparse_grid import SparseGrid, build

__version__ = "0.1.0"

__all__ = [
    "AnchorPoint", "DdsgFunction", "SparseGrid", "backend_name", "build", "ddsg_eval", "decompose", "hdmr",
    "irbc", "runtime", "solver", "sparse_grid", "__version__",
]
