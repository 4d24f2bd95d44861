"""Embedding export for the synbandit feature-store format."""

__version__ = "0.1.0"
