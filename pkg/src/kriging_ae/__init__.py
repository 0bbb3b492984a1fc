"""Kriging surrogates, importance sampling and adaptive design for rare-event estimation."""

__version__ = "0.1.0"
