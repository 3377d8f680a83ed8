"""Sparse-signal-guided multi-modal temporal action segmentation."""

__version__ = "0.1.0"
