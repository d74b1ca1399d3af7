"""Symbolic-numeric toolkit for renormalised FitzHugh-Nagumo-type SPDE-ODE systems.

Subpackages by theme:

* :mod:`fhnspde.symbols` -- graded symbol algebra (trees, homogeneity, enumeration)
* :mod:`fhnspde.hopf` -- structure-group coproduct and group action
* :mod:`fhnspde.renorm` -- renormalisation group, renormalised nonlinearity
* :mod:`fhnspde.kernels` -- truncated heat kernel, mollification, constants
* :mod:`fhnspde.noise` -- white noise sampling, stochastic convolutions, Wick powers
* :mod:`fhnspde.solver` -- spectral ETD solver for the coupled system, epsilon sweeps
* :mod:`fhnspde.cli` -- command line front end
"""

__version__ = "0.1.0"

from .symbols import (  # noqa: F401
    Homogeneity,
    Scaling,
    StructureError,
    Symbol,
    SymbolTable,
    canonicalize,
    enumerate_symbols,
    homogeneity,
    xi_count,
)
