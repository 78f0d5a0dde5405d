"""Desk-scale toolkit for UAV-based outdoor emission assessment of private 5G networks."""

__version__ = "0.1.0"
