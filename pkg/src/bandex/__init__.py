"""Bandwidth-limited multi-robot exploration workbench."""

__version__ = "0.1.0"
