"""Exploration, reconstruction and anticipation-guided navigation on
synthetic voxel scenes."""

__version__ = "0.1.0"
