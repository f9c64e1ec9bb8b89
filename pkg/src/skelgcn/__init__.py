"""Spatio-temporal graph convolutions for skeleton action recognition with
self-similarity guided temporal weighting."""

__version__ = "0.1.0"
