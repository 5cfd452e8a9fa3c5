"""Hyperbolic-geometry lab: conical limit sets, sets of divergence of
Mobius sequences, the gd-operator rank test for countable sets, and
continued-fraction convergence constructions."""

__version__ = "0.1.0"
