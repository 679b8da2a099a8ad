"""2D PI-operator algebra, PDE to PIE conversion, and LPI stability tests."""

from .poly_core import Poly, PolyMatrix, Rect, monomial_basis
from .pi_algebra import (
    N011, N011To2d, N0112, N1d, N1dTo2d, N2d, N2dTo011, N2dTo1d, PIError, PIOp,
    adjoint, compose, embed,
)
from .pde_model import PdeSpec, parse_pde, serialize
from .pie_converter import PiePair, convert

__all__ = [
    "Poly", "PolyMatrix", "Rect", "monomial_basis",
    "N011", "N011To2d", "N0112", "N1d", "N1dTo2d", "N2d", "N2dTo011", "N2dTo1d",
    "PIError", "PIOp", "adjoint", "compose", "embed",
    "PdeSpec", "parse_pde", "serialize", "PiePair", "convert",
]
