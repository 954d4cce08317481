"""Measure how much input information survives in hidden-layer embeddings."""

__version__ = "0.1.0"
