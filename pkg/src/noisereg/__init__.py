"""Regularization-by-noise laboratory for the stochastic transport equation."""
