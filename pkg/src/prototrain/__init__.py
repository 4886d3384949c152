"""Prototype-voting label correction and self-training on noisy-label datasets."""

__version__ = "0.1.0"
