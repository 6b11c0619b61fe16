"""Surrogate-assisted tuning of a collocation BVP solver."""
