"""Dipolar spin-defect ensembles under dynamical decoupling, and zero-field ESR."""

__version__ = "0.1.0"
