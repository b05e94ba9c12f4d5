"""Passivity-based distributed convex optimization with delay-robust links."""

__version__ = "0.1.0"
