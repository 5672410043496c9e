"""
Spectral density toolkit for half-line periodic Schrodinger operators with a
Wigner-von Neumann perturbation.

The package computes band structures, Bloch solutions, critical points,
the Harris-Lutz reduction to Levinson form, the asymptotic coefficient of
the regular solution and from it the Weyl-Titchmarsh density.
"""

__version__ = "0.1.0"
