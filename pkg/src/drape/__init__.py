"""Doubly robust, cross-fitted estimation of average partial effects."""

__version__ = "0.1.0"
