"""Multimaterial topology optimization for finite-strain elastoplastic structures."""

__version__ = "0.1.0"
