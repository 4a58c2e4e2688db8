"""Numerical laboratory for a pilot-wave model of the Klein-Gordon equation."""
__version__ = "0.1.0"
