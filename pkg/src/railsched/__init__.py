"""Deterministic time-expanded train scheduling on rail grids."""

__version__ = "0.1.0"
