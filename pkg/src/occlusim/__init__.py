"""Occlusion-aware motion planning safety toolkit."""

__version__ = "0.1.0"
