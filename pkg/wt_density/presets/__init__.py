"""
Named operator presets for the spectral density toolkit.
"""
