"""Dirichlet boundary control of the Poisson equation on square grids."""

from bctrl.grid import BoundaryValues, DomainField, Grid, clamp_boundary, clamp_domain, extract_edges

__all__ = [
    "BoundaryValues",
    "DomainField",
    "Grid",
    "clamp_boundary",
    "clamp_domain",
    "extract_edges",
]

__version__ = "0.1.0"
