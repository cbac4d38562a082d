"""Renormed-norm dissipativity certificates for the periodic Navier-Stokes truncation."""

__version__ = "0.1.0"
