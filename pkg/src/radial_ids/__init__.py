"""Evolutionary solvers and energy diagnostics for radially foliated initial data."""

__version__ = "0.1.0"
