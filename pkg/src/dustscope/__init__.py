"""Floquet analysis of drive-induced state transitions in transmon circuits."""

__version__ = "0.1.0"
