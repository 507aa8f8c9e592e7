"""Numerical laboratory for multiclass discriminatory processor sharing queues."""

__version__ = "0.1.0"
