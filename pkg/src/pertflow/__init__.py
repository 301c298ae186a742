"""Simulation and verification of singularly perturbed stochastic evolution equations

    du + (A + eps G) u dt = f(u) dt + B(u) dW

together with the hierarchy of eps-derivatives of the solution.
"""

from .coefficients import CoefficientField, preset
from .noise import WienerDriver
from .operators import OperatorPair
from .reports import Report
from .sensitivity import correction_terms, solve_hierarchy
from .solver import TimeGrid, cp_norm, solve_base
from .spectral import BasisSpec, SpectralElement, graph_norm, inner_product

__version__ = "0.1.0"

__all__ = [
    "BasisSpec",
    "SpectralElement",
    "inner_product",
    "graph_norm",
    "OperatorPair",
    "WienerDriver",
    "CoefficientField",
    "preset",
    "TimeGrid",
    "solve_base",
    "cp_norm",
    "solve_hierarchy",
    "correction_terms",
    "Report",
]
