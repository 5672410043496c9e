"""
Numerical core: ODE engine, potentials, periodic theory, oscillatory
integrals, the Harris-Lutz reduction, Levinson asymptotics and the
spectral layer (A, m, density).
"""
