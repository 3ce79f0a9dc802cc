"""Bayesian hierarchical models for populations of multiplex-style networks."""

__version__ = "0.1.0"
