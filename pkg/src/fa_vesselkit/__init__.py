"""Vessel detection, robust chamfer registration and label transfer for FA imagery."""

__version__ = "0.1.0"
