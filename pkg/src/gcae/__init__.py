"""Gated convolutional networks with aspect embedding for aspect-based sentiment analysis."""

__version__ = "0.1.0"
