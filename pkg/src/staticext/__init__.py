"""Numerical static vacuum extensions of boundary data on star-shaped surfaces."""
from .mesh import Chart, ChartError, Surface, refine
from .system import BoundaryData, State, StaticSystem, flat_data, residual_T, residual_Tbar, schwarzschild_data
from .gauge import gauge_residuals, harmonic_killing_basis
from .solver import (DivergenceError, MaxIterError, NewtonError, NewtonSettings, PositivityError,
                     SolveReport, factorize, newton_solve, singular_spectrum)
from .analysis import adm_mass, schwarzschild_pair, static_regularity_scan

__all__ = [
    "Chart", "ChartError", "Surface", "refine",
    "BoundaryData", "State", "StaticSystem", "flat_data", "residual_T", "residual_Tbar",
    "schwarzschild_data", "gauge_residuals", "harmonic_killing_basis",
    "DivergenceError", "MaxIterError", "NewtonError", "NewtonSettings", "PositivityError",
    "SolveReport", "factorize", "newton_solve", "singular_spectrum",
    "adm_mass", "schwarzschild_pair", "static_regularity_scan",
]
