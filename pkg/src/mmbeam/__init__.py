"""Multimodal (position, camera, LiDAR) mmWave beam prediction in numpy."""

__version__ = "0.1.0"
