"""Generative retrieval (atomic and hierarchical-semantic DocIDs) next to dense retrieval."""

__version__ = "0.1.0"
