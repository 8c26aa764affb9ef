"""Toolkit for index-1 stochastic differential-algebraic equations.

Builds the projector/pseudo-inverse decoupling of a singular-coefficient
system A(t)dX = f(t,X)dt + g(t,X)dW, checks the structural assumptions
numerically, solves the algebraic constraint, and simulates the resulting
regular SDE with Monte Carlo moment estimation.
"""

__version__ = "0.1.0"
