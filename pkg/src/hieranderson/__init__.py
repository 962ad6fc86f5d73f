"""Multiscale solver and verification engine for the hierarchical Anderson model."""
__version__ = "0.1.0"
