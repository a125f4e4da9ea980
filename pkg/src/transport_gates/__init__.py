"""Simulation toolkit for single-qubit gates driven by transporting ions through static laser beams."""
__version__ = "0.1.0"
