"""Pilot-wave laboratory: Schrodinger solvers, Bohmian trajectories and
quantum-hydrodynamic diagnostics on uniform 1D/2D grids."""

from pilotwave.fields import (
    ComplexField,
    Grid,
    NodeMask,
    RealField,
    UnitSystem,
    gradient,
    integrate,
    laplacian,
    make_grid,
    normalize,
    polar_decompose,
)

__version__ = "0.1.0"

__all__ = [
    "ComplexField",
    "Grid",
    "NodeMask",
    "RealField",
    "UnitSystem",
    "gradient",
    "integrate",
    "laplacian",
    "make_grid",
    "normalize",
    "polar_decompose",
]
