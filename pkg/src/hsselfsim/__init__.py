"""Numerical laboratory for self-similar solutions of the Hardy-Sobolev heat equation."""

__version__ = "0.1.0"
