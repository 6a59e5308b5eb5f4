"""Unrolled projected-gradient networks for constrained wireless resource allocation."""

__version__ = "0.1.0"
