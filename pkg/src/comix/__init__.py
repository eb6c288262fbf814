"""Temporal contrastive video domain adaptation with background mixing."""

__version__ = "0.1.0"
