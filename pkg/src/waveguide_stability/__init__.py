"""Numerical harness for lateral-data stability of Schrodinger waveguides."""

__version__ = "0.1.0"
