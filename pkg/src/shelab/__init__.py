"""Stochastic heat equation with Riesz-correlated multiplicative noise.

Spectral solver on the torus, checks of the heat-kernel estimates and
Yamada-Watanabe constructions, and experiments on pathwise uniqueness.
"""

__version__ = "0.1.0"
