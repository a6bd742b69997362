"""Dual-stream whole-slide encoder, CPRT report structuring, dataset builders and metrics."""

__version__ = "0.1.0"
