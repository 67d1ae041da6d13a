"""Terrain-aware UAV relay simulation and offline RL workbench."""

__version__ = "0.1.0"
