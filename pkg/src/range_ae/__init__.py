"""Bottleneck autoencoders for two-scatterer radar range superresolution."""

__version__ = "0.1.0"
