"""Surrogate quantum circuits for the D2Q9 BGK collision operator."""

__version__ = "0.1.0"
