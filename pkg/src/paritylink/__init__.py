"""Ancilla-assisted qubit transmission over correlated-dephasing dual-rail channels."""

__version__ = "0.1.0"
