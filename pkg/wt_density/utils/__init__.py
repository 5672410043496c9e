"""
Utility modules for the spectral density toolkit.
"""
