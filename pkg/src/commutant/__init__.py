"""Numerical checks of commutativity between factors of variation.

Lie brackets and flow-commutator defects of vector fields, matrix
exponential dictionaries and their joint diagonalization, rank-based
distillation of generative maps, commuting group actions and the ordering
mixtures that arise when flows do not commute.
"""

__version__ = "0.1.0"
