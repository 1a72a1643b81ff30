"""Separable value-function approximation over interconnection graphs,
with the Riccati solvers and test models needed to study it."""

__version__ = "0.1.0"
