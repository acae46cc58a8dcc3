"""Adjoint-based shape optimization of pipe bends against particle erosion (2D, P1 FEM)."""

__version__ = "0.1.0"
