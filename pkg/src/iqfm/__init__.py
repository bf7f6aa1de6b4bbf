"""Iterative quantum feature maps on a dense statevector simulator."""

__version__ = "0.1.0"
