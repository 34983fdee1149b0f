"""Spatial search on crystal lattices with Dirac points."""

from .lattice import LatticeError, LatticeSpec, builtin, load_spec
from .bloch import find_dirac_points, verify_assumptions

__version__ = "0.1.0"

__all__ = ["LatticeError", "LatticeSpec", "builtin", "load_spec", "find_dirac_points", "verify_assumptions", "__version__"]
