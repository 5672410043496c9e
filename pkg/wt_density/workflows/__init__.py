"""
Workflows built on the solvers: the density-scan orchestrator and the
verification suites.
"""
