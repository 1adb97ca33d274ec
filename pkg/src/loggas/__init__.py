"""Weighted logarithmic potential theory on planar rectangles."""

__version__ = "0.1.0"
