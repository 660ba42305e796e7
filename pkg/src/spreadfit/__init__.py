"""Least-squares fitting of SIR-type spread models to daily count data."""

__version__ = "0.1.0"
