"""Exact desk-scale simulation of quantum-walk annealing for Langevin samplers."""

__version__ = "0.1.0"
